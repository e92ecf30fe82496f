use super::{FrameSample, SequenceSample};
use crate::camera::{compose, RigidTransform};
use crate::tensor::{resize_bilinear, resize_nearest};

/// Cut a recording into training clips: keep one frame out of `subsample`,
/// split the kept frames into non-overlapping clips of `clip_len` (dropping
/// the remainder), and resize every frame to `out_size x out_size`
/// (bilinear for color, nearest for depth).
///
/// Only complete groups of `subsample` source frames produce a kept frame,
/// so `n` frames keep `n / subsample` of them. The motion of a kept frame is
/// the composition of the skipped per-step motions.
pub fn preprocess(sample: &SequenceSample, subsample: usize, clip_len: usize, out_size: usize) -> Vec<SequenceSample> {
    assert!(subsample > 0 && clip_len > 0 && out_size > 0, "preprocess parameters must be positive");
    let kept = sample.len() / subsample;
    let mut motions = Vec::with_capacity(kept);
    for k in 0..kept {
        let idx = k * subsample;
        let m = if k == 0 {
            RigidTransform::identity()
        } else {
            // motion maps current into previous: chain prev <- ... <- cur
            (idx - subsample + 1..=idx).fold(RigidTransform::identity(), |acc, t| compose(&acc, &sample.frames[t].motion))
        };
        motions.push(m);
    }
    let k_out = if (sample.intrinsics.width, sample.intrinsics.height) == (out_size, out_size) {
        sample.intrinsics
    } else {
        sample.intrinsics.resized(out_size, out_size)
    };
    let resize_frame = |f: &FrameSample, motion: RigidTransform| FrameSample {
        rgb: resize_bilinear(&f.rgb, out_size, out_size),
        depth: resize_nearest(&f.depth, out_size, out_size),
        motion,
    };
    (0..kept / clip_len)
        .map(|c| {
            let frames = (0..clip_len)
                .map(|i| {
                    let k = c * clip_len + i;
                    let m = if i == 0 { RigidTransform::identity() } else { motions[k] };
                    resize_frame(&sample.frames[k * subsample], m)
                })
                .collect();
            SequenceSample {
                id: format!("{}_{c:03}", sample.id),
                frames,
                intrinsics: k_out,
                poses: (0..clip_len).map(|i| sample.poses[(c * clip_len + i) * subsample]).collect(),
            }
        })
        .collect()
}

/// Trajectories whose id is a multiple of 3 go to the test set. Returns
/// `(train, test)`, both in input order.
pub fn split_midair_style(trajectory_ids: &[u64]) -> (Vec<u64>, Vec<u64>) {
    trajectory_ids.iter().partition(|&&id| id % 3 != 0)
}
