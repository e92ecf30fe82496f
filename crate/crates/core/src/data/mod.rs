//! Sequences of frames with ground truth, their on-disk layout, the
//! preprocessing into training clips, and a synthetic scene renderer.
//!
//! A dataset directory holds one sub-directory per sequence:
//!
//! ```text
//! root/<seq_id>/camera.txt        fx fy s cx cy width height
//! root/<seq_id>/poses.csv         frame_index,px,py,pz,qw,qx,qy,qz
//! root/<seq_id>/rgb/000000.png    8-bit RGB
//! root/<seq_id>/depth/000000.pfm  depth in meters
//! ```
//!
//! Poses are camera-to-world: a world position and a unit quaternion.

mod layout;
mod pfm;
mod preprocess;
mod synth;

pub use layout::{dataset_sequences, load_dataset, load_sequence, read_poses, save_sequence, write_poses};
pub use pfm::{read_pfm, read_pfm_file, write_pfm, write_pfm_file};
pub use preprocess::{preprocess, split_midair_style};
pub use synth::{generate_described, generate_random, generate_synthetic, Geometry, SceneSpec, Trajectory, FRAME_INTERVAL};

use crate::camera::{motion_between, Intrinsics, Pose, RigidTransform};
use crate::error::{Error, Result};
use crate::network::Frame;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    /// `H x W x 3`, values in `[0, 1]`.
    pub rgb: Tensor<f32>,
    /// `H x W x 1`, meters along the optical axis.
    pub depth: Tensor<f32>,
    /// Maps current-camera points into the previous camera; identity for the
    /// first frame.
    pub motion: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub id: String,
    pub frames: Vec<FrameSample>,
    pub intrinsics: Intrinsics,
    /// Camera-to-world pose of every frame.
    pub poses: Vec<Pose>,
}

impl SequenceSample {
    /// Build a sample from images, depths and poses; motions are derived from
    /// consecutive poses.
    pub fn from_poses(
        id: impl Into<String>,
        intrinsics: Intrinsics,
        rgb: Vec<Tensor<f32>>,
        depth: Vec<Tensor<f32>>,
        poses: Vec<Pose>,
    ) -> Result<Self> {
        if rgb.len() != depth.len() || rgb.len() != poses.len() {
            return Err(Error::shape(format!(
                "{} images, {} depth maps, {} poses",
                rgb.len(),
                depth.len(),
                poses.len()
            )));
        }
        let frames = rgb
            .into_iter()
            .zip(depth)
            .enumerate()
            .map(|(t, (rgb, depth))| FrameSample {
                rgb,
                depth,
                motion: if t == 0 {
                    RigidTransform::identity()
                } else {
                    motion_between(&poses[t - 1], &poses[t])
                },
            })
            .collect();
        let s = SequenceSample {
            id: id.into(),
            frames,
            intrinsics,
            poses,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.intrinsics.height, self.intrinsics.width);
        for (t, f) in self.frames.iter().enumerate() {
            if f.rgb.shape() != (h, w, 3) || f.depth.shape() != (h, w, 1) {
                return Err(Error::shape(format!(
                    "frame {t} of {}: rgb {:?}, depth {:?}, camera {h}x{w}",
                    self.id,
                    f.rgb.shape(),
                    f.depth.shape()
                )));
            }
        }
        if self.poses.len() != self.frames.len() {
            return Err(Error::shape(format!(
                "{} poses for {} frames in {}",
                self.poses.len(),
                self.frames.len(),
                self.id
            )));
        }
        Ok(())
    }

    /// Network inputs for frames `range`; the first frame of the window is
    /// treated as a sequence start.
    pub fn network_frames(&self, range: std::ops::Range<usize>) -> Vec<Frame<'_, f32>> {
        self.frames[range]
            .iter()
            .map(|f| Frame {
                image: &f.rgb,
                motion: &f.motion,
            })
            .collect()
    }

    /// The last `n` frames as a new sequence (all frames if shorter).
    pub fn tail(&self, n: usize) -> SequenceSample {
        let start = self.len().saturating_sub(n);
        let mut frames = self.frames[start..].to_vec();
        if let Some(f) = frames.first_mut() {
            f.motion = RigidTransform::identity();
        }
        SequenceSample {
            id: self.id.clone(),
            frames,
            intrinsics: self.intrinsics,
            poses: self.poses[start..].to_vec(),
        }
    }
}
