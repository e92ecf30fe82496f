//! Multi-level log-L1 training loss and its L2 weight regulariser.
//!
//! Per frame, every pyramid level `l` (1 = finest) contributes
//! `2^(l+1) * sum |ln d - ln d_hat|` over its pixels, with the ground truth
//! bilinearly resized to the level's resolution. Each level's sum is divided
//! by that level's own pixel count and the total is scaled by `alpha`.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{resize_bilinear, ParamTensor, Tensor};

/// How each level's pixel sum is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelNormalization {
    /// Divide by the level's own `H * W`.
    #[default]
    PerLevel,
    /// Divide every level by the ground-truth image `H * W`.
    ImageSize,
}

/// Which end of the pyramid gets the smallest `2^(l+1)` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelWeighting {
    /// `l = 1` is the finest level (weight 4), the coarsest gets `2^(M+1)`.
    #[default]
    FinestFirst,
    /// `l = 1` is the coarsest level.
    CoarsestFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub gamma: f64,
    pub normalization: LevelNormalization,
    pub weighting: LevelWeighting,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.64,
            gamma: 0.0004,
            normalization: LevelNormalization::default(),
            weighting: LevelWeighting::default(),
        }
    }
}

impl LossWeights {
    /// Weight `2^(l+1)` of the level stored at `index` (0 = finest) in a
    /// pyramid of `levels` levels.
    pub fn level_weight(&self, index: usize, levels: usize) -> f64 {
        let l = match self.weighting {
            LevelWeighting::FinestFirst => index + 1,
            LevelWeighting::CoarsestFirst => levels - index,
        };
        (1u64 << (l + 1)) as f64
    }

    fn normalizer(&self, level: (usize, usize), image: (usize, usize)) -> f64 {
        match self.normalization {
            LevelNormalization::PerLevel => (level.0 * level.1) as f64,
            LevelNormalization::ImageSize => (image.0 * image.1) as f64,
        }
    }
}

/// Natural-log ground truth resized to each level's resolution.
pub fn level_targets<T: Real>(gt: &Tensor<T>, shapes: &[(usize, usize)]) -> Vec<Tensor<T>> {
    shapes
        .iter()
        .map(|&(h, w)| resize_bilinear(gt, h, w).map(|d| d.ln()))
        .collect()
}

/// Frame loss from per-level log-depth estimates (index 0 = finest) and the
/// matching log targets. Also returns `dL/d(log estimate)` per level.
pub fn frame_loss_log<T: Real>(
    est_log: &[Tensor<T>],
    target_log: &[Tensor<T>],
    image: (usize, usize),
    w: &LossWeights,
) -> Result<(f64, Vec<Tensor<T>>)> {
    if est_log.is_empty() || est_log.len() != target_log.len() {
        return Err(Error::shape(format!(
            "{} level estimates for {} targets",
            est_log.len(),
            target_log.len()
        )));
    }
    let levels = est_log.len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(levels);
    for (idx, (e, t)) in est_log.iter().zip(target_log).enumerate() {
        e.expect_shape(t, "level estimate vs target")?;
        let scale = w.alpha * w.level_weight(idx, levels) / w.normalizer((e.height(), e.width()), image);
        let mut sum = 0.0;
        let mut g = Tensor::zeros(e.height(), e.width(), e.channels());
        for ((&ev, &tv), gv) in e.data().iter().zip(t.data()).zip(g.data_mut()) {
            let diff = ev.f64() - tv.f64();
            sum += diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gv = T::lit(scale * sign);
        }
        total += scale * sum;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Frame loss from linear per-level depth estimates (index 0 = finest) and
/// the full-resolution ground truth.
pub fn frame_loss<T: Real>(estimates: &[Tensor<T>], gt: &Tensor<T>, w: &LossWeights) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::shape("frame loss needs at least one level"));
    }
    if gt.channels() != 1 || estimates.iter().any(|e| e.channels() != 1) {
        return Err(Error::shape("depth maps must have one channel"));
    }
    let shapes: Vec<_> = estimates.iter().map(|e| (e.height(), e.width())).collect();
    let targets = level_targets(gt, &shapes);
    let logs: Vec<_> = estimates.iter().map(|e| e.map(|d| d.ln())).collect();
    let (loss, _) = frame_loss_log(&logs, &targets, (gt.height(), gt.width()), w)?;
    Ok(loss)
}

/// Squared L2 norm of every weight tensor; biases are excluded.
pub fn weight_penalty<T: Real>(params: &[ParamTensor<T>]) -> f64 {
    params.iter().filter(|p| p.is_weight).map(|p| p.value.sum_squares()).sum()
}

/// Mean frame loss plus `gamma` times the weight penalty.
pub fn total_loss<T: Real>(frame_losses: &[f64], params: &[ParamTensor<T>], w: &LossWeights) -> f64 {
    assert!(!frame_losses.is_empty(), "total loss over zero frames");
    let mean = frame_losses.iter().sum::<f64>() / frame_losses.len() as f64;
    mean + w.gamma * weight_penalty(params)
}
