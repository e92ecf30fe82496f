use crate::camera::{Intrinsics, RigidTransform};
use crate::error::{Error, Result};
use crate::layers::{cost_volume, warp, WarpPlan};
use crate::real::Real;
use crate::tensor::{conv3x3, leaky_relu, log_depth_encode, resize_bilinear, Tensor};

use super::{Conv, Network};

/// One input frame: the normalised RGB image and the motion from the
/// previous frame (mapping current-camera points into the previous camera).
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a, T> {
    pub image: &'a Tensor<T>,
    pub motion: &'a RigidTransform,
}

/// Recurrent information kept for one level between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState<T = f32> {
    pub features: Tensor<T>,
    /// Linear depth in meters.
    pub depth: Tensor<T>,
}

/// Everything the network remembers about the frames seen so far. An empty
/// state means the next step is the first of a sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceState<T = f32> {
    pub levels: Vec<LevelState<T>>,
    pub timestep: usize,
}

impl<T> SequenceState<T> {
    pub fn new() -> Self {
        SequenceState {
            levels: Vec::new(),
            timestep: 0,
        }
    }

    pub fn is_initial(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput<T = f32> {
    /// Full-resolution depth (meters).
    pub depth: Tensor<T>,
    /// Per-level depth (meters), index 0 = finest level.
    pub level_depths: Vec<Tensor<T>>,
    pub state: SequenceState<T>,
}

/// Depths that drive the warp sampling coordinates, per time step and level.
/// Recorded by a forward pass; replaying them holds the coordinates fixed.
pub type CoordDepths<T> = Vec<Vec<Tensor<T>>>;

#[derive(Debug, Clone)]
pub(crate) struct ChainCache<T> {
    pub inputs: Vec<Tensor<T>>,
    /// Pre-activation outputs of the activated layers.
    pub pre: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LevelTrace<T> {
    pub feat_plan: WarpPlan,
    pub depth_plan: WarpPlan,
    pub warped_features: Tensor<T>,
    pub warped_depth: Tensor<T>,
    pub coord_depth: Tensor<T>,
    pub estimator: ChainCache<T>,
    /// Estimator output before the depth-range clamp.
    pub raw: Tensor<T>,
    /// Clamped log-depth.
    pub log_depth: Tensor<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct StepTrace<T> {
    pub encoder: Vec<ChainCache<T>>,
    pub features: Vec<Tensor<T>>,
    pub levels: Vec<LevelTrace<T>>,
    /// The first frame pairs the current features with themselves.
    pub first: bool,
}

/// Forward pass over a whole sequence with everything backward needs.
#[derive(Debug, Clone)]
pub struct SequenceTrace<T> {
    pub(crate) steps: Vec<StepTrace<T>>,
    pub(crate) image_size: (usize, usize),
    /// Per frame, per level (0 = finest): clamped log-depth estimates.
    pub level_log_depths: Vec<Vec<Tensor<T>>>,
    /// Per frame full-resolution depth (meters).
    pub depths: Vec<Tensor<T>>,
}

impl<T: Real> SequenceTrace<T> {
    pub fn coord_depths(&self) -> CoordDepths<T> {
        self.steps
            .iter()
            .map(|s| s.levels.iter().map(|l| l.coord_depth.clone()).collect())
            .collect()
    }
}

impl<T: Real> Network<T> {
    fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    pub(crate) fn run_chain(&self, convs: &[Conv], input: Tensor<T>, activate_last: bool) -> Result<(Tensor<T>, ChainCache<T>)> {
        let mut cache = ChainCache {
            inputs: Vec::with_capacity(convs.len()),
            pre: Vec::with_capacity(convs.len()),
        };
        let mut x = input;
        for (i, conv) in convs.iter().enumerate() {
            let z = conv3x3(&x, &self.params[conv.weight], &self.params[conv.bias], conv.stride)?;
            cache.inputs.push(x);
            if i + 1 < convs.len() || activate_last {
                x = leaky_relu(&z, self.slope());
                cache.pre.push(z);
            } else {
                x = z;
            }
        }
        Ok((x, cache))
    }

    fn encode_traced(&self, image: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<ChainCache<T>>)> {
        if image.channels() != 3 {
            return Err(Error::shape(format!("expected an RGB image, got {} channels", image.channels())));
        }
        self.config.check_image(image.height(), image.width())?;
        let mut feats = Vec::with_capacity(self.config.num_levels);
        let mut caches = Vec::with_capacity(self.config.num_levels);
        let mut x = image.clone();
        for level in 0..self.config.num_levels {
            let (f, cache) = self.run_chain(&self.encoder[level], x, true)?;
            x = f.clone();
            feats.push(f);
            caches.push(cache);
        }
        Ok((feats, caches))
    }

    /// Feature pyramid of one image; index 0 is the finest level
    /// (`H/2 x W/2`).
    pub fn encode(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.encode_traced(image)?.0)
    }

    /// The six motion values broadcast to every pixel of level `level`:
    /// translation scaled by `2^-(level+1)`, then the axis-angle rotation.
    fn motion_channels(&self, motion: &RigidTransform, level: usize) -> [T; 6] {
        let scale = 1.0 / (1u64 << (level + 1)) as f64;
        let t = motion.translation * scale;
        let r = motion.axis_angle();
        [t.x, t.y, t.z, r.x, r.y, r.z].map(T::lit)
    }

    /// Warps and stacks the estimator input of one level. Returns the input
    /// and the intermediate values the backward pass needs.
    #[allow(clippy::too_many_arguments)]
    fn preprocess_traced(
        &self,
        level: usize,
        f_cur: &Tensor<T>,
        prev: &LevelState<T>,
        d_up_log: &Tensor<T>,
        coord_depth: &Tensor<T>,
        motion: &RigidTransform,
        k_level: &Intrinsics,
    ) -> Result<(Tensor<T>, WarpPlan, WarpPlan, Tensor<T>, Tensor<T>)> {
        let (h, w, _) = f_cur.shape();
        if prev.features.shape() != f_cur.shape() || prev.depth.shape() != (h, w, 1) || d_up_log.shape() != (h, w, 1) {
            return Err(Error::shape(format!(
                "level {} inputs: features {:?}, previous features {:?}, previous depth {:?}, upsampled depth {:?}",
                level + 1,
                f_cur.shape(),
                prev.features.shape(),
                prev.depth.shape(),
                d_up_log.shape()
            )));
        }
        let (fw, feat_plan) = warp(&prev.features, coord_depth, motion, k_level, false)?;
        let (dw, depth_plan) = warp(&prev.depth, coord_depth, motion, k_level, self.config.transform_depth)?;
        let cv = cost_volume(f_cur, &fw.warped, self.config.cost_radius)?;
        let dw_log = log_depth_encode(&dw.warped, self.config.depth_range);
        let grid = Tensor::from_fn(h, w, 2, |y, x, c| {
            let (v, n) = if c == 0 { (x, w) } else { (y, h) };
            if n > 1 {
                T::lit(2.0 * v as f64 / (n - 1) as f64 - 1.0)
            } else {
                T::zero()
            }
        });
        let m = self.motion_channels(motion, level);
        let motion_map = Tensor::from_fn(h, w, 6, |_, _, c| m[c]);
        let input = Tensor::concat_channels(&[f_cur, &cv, &dw_log, d_up_log, &grid, &motion_map])?;
        Ok((input, feat_plan, depth_plan, fw.warped, dw.warped))
    }

    /// Estimator input of level `level` (0 = finest): current features, cost
    /// volume, warped previous depth (log), upsampled depth (log), grid
    /// coordinates in `[-1, 1]` and the six motion channels.
    pub fn preprocess_level(
        &self,
        level: usize,
        f_enc_t: &Tensor<T>,
        state: &LevelState<T>,
        d_up: &Tensor<T>,
        motion: &RigidTransform,
        k_level: &Intrinsics,
    ) -> Result<Tensor<T>> {
        let d_up_log = log_depth_encode(d_up, self.config.depth_range);
        let coord = d_up_log.map(|v| v.exp());
        Ok(self
            .preprocess_traced(level, f_enc_t, state, &d_up_log, &coord, motion, k_level)?
            .0)
    }

    /// Run the level's estimator; returns linear depth.
    pub fn estimate_depth_level(&self, level: usize, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (raw, _) = self.run_chain(&self.estimators[level], input.clone(), false)?;
        let range = self.config.depth_range;
        Ok(raw.map(|x| range.clamp_log(x).exp()))
    }

    pub(crate) fn step_traced(
        &self,
        image: &Tensor<T>,
        motion: &RigidTransform,
        state: &SequenceState<T>,
        k: &Intrinsics,
        coord: Option<&[Tensor<T>]>,
    ) -> Result<(StepOutput<T>, StepTrace<T>)> {
        let cfg = &self.config;
        let m = cfg.num_levels;
        let (h, w) = (image.height(), image.width());
        if (k.height, k.width) != (h, w) {
            return Err(Error::shape(format!(
                "intrinsics for {}x{} with a {h}x{w} image",
                k.height, k.width
            )));
        }
        let (features, encoder) = self.encode_traced(image)?;
        let first = state.is_initial();
        if !first && state.levels.len() != m {
            return Err(Error::shape(format!("state has {} levels, network {m}", state.levels.len())));
        }
        let identity = RigidTransform::identity();
        let motion = if first { &identity } else { motion };
        let range = cfg.depth_range;
        let init_log = T::lit(range.clamp(cfg.d_init).ln());

        let mut traces: Vec<Option<LevelTrace<T>>> = (0..m).map(|_| None).collect();
        let mut above: Option<Tensor<T>> = None;
        for level in (0..m).rev() {
            let f_cur = &features[level];
            let (lh, lw, _) = f_cur.shape();
            let d_up_log = match &above {
                None => Tensor::full(lh, lw, 1, init_log),
                Some(x) => resize_bilinear(x, lh, lw),
            };
            let fallback;
            let prev = if first {
                fallback = LevelState {
                    features: f_cur.clone(),
                    depth: Tensor::full(lh, lw, 1, T::lit(range.clamp(cfg.d_init))),
                };
                &fallback
            } else {
                &state.levels[level]
            };
            let coord_depth = match coord {
                Some(c) => c[level].clone(),
                None => d_up_log.map(|v| v.exp()),
            };
            let k_level = k.at_level(level + 1);
            let (input, feat_plan, depth_plan, warped_features, warped_depth) =
                self.preprocess_traced(level, f_cur, prev, &d_up_log, &coord_depth, motion, &k_level)?;
            let (raw, estimator) = self.run_chain(&self.estimators[level], input, false)?;
            let log_depth = raw.map(|x| range.clamp_log(x));
            above = Some(log_depth.clone());
            traces[level] = Some(LevelTrace {
                feat_plan,
                depth_plan,
                warped_features,
                warped_depth,
                coord_depth,
                estimator,
                raw,
                log_depth,
            });
        }
        let levels: Vec<LevelTrace<T>> = traces.into_iter().map(|t| t.expect("every level ran")).collect();
        let depth = resize_bilinear(&levels[0].log_depth, h, w).map(|x| x.exp());
        let level_depths: Vec<Tensor<T>> = levels.iter().map(|l| l.log_depth.map(|x| x.exp())).collect();
        let new_state = SequenceState {
            levels: features
                .iter()
                .zip(&level_depths)
                .map(|(f, d)| LevelState {
                    features: f.clone(),
                    depth: d.clone(),
                })
                .collect(),
            timestep: if first { 1 } else { state.timestep + 1 },
        };
        Ok((
            StepOutput {
                depth,
                level_depths,
                state: new_state,
            },
            StepTrace {
                encoder,
                features,
                levels,
                first,
            },
        ))
    }

    /// Process one frame. `state` is the output state of the previous step,
    /// or an empty state for the first frame of a sequence.
    pub fn step(
        &self,
        image: &Tensor<T>,
        motion: &RigidTransform,
        state: &SequenceState<T>,
        k: &Intrinsics,
    ) -> Result<StepOutput<T>> {
        Ok(self.step_traced(image, motion, state, k, None)?.0)
    }

    /// Online inference: one full-resolution depth map per frame, frame `t`
    /// only depending on frames `0..=t`.
    pub fn infer_sequence(&self, frames: &[Frame<'_, T>], k: &Intrinsics) -> Result<Vec<Tensor<T>>> {
        if frames.is_empty() {
            return Err(Error::shape("empty sequence"));
        }
        let mut state = SequenceState::new();
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let step = self.step(f.image, f.motion, &state, k)?;
            out.push(step.depth);
            state = step.state;
        }
        Ok(out)
    }

    /// Forward pass over `frames` keeping every intermediate needed by
    /// [`Network::sequence_loss`]. With `coord`, warps sample at the recorded
    /// depths instead of the current estimates.
    pub fn forward_sequence(
        &self,
        frames: &[Frame<'_, T>],
        k: &Intrinsics,
        coord: Option<&CoordDepths<T>>,
    ) -> Result<SequenceTrace<T>> {
        let first = frames.first().ok_or_else(|| Error::shape("empty sequence"))?;
        let mut state = SequenceState::new();
        let mut steps = Vec::with_capacity(frames.len());
        let mut level_log_depths = Vec::with_capacity(frames.len());
        let mut depths = Vec::with_capacity(frames.len());
        for (t, f) in frames.iter().enumerate() {
            let c = coord.map(|c| c[t].as_slice());
            let (out, trace) = self.step_traced(f.image, f.motion, &state, k, c)?;
            level_log_depths.push(trace.levels.iter().map(|l| l.log_depth.clone()).collect());
            depths.push(out.depth);
            steps.push(trace);
            state = out.state;
        }
        Ok(SequenceTrace {
            steps,
            image_size: (first.image.height(), first.image.width()),
            level_log_depths,
            depths,
        })
    }
}
