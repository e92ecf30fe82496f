use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::layers::{cost_volume_backward, warp_backward};
use crate::loss::{frame_loss_log, level_targets, weight_penalty, LossWeights};
use crate::real::Real;
use crate::tensor::{conv3x3_backward, leaky_relu_backward, resize_bilinear_backward, Tensor};

use super::forward::{ChainCache, CoordDepths, Frame, SequenceTrace};
use super::{Conv, Network};

/// Parameter gradients, one flat tensor per entry of [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub params: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            params: net.params.iter().map(|p| Tensor::zeros(1, 1, p.numel())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.params.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|g| g.all_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.params.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt()
    }

    /// Copy into the `grad` fields of `net`.
    pub fn store(&self, net: &mut Network<T>) {
        for (p, g) in net.params.iter_mut().zip(&self.params) {
            p.grad = g.clone();
        }
    }
}

/// Loss of one sequence: mean frame loss plus the weight penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLoss {
    pub total: f64,
    pub frame_losses: Vec<f64>,
    /// `gamma * sum ||W||^2`.
    pub penalty: f64,
}

impl<T: Real> Network<T> {
    /// Forward pass and loss for one sequence with ground truth `gt` (one
    /// full-resolution depth map per frame).
    pub fn sequence_loss(
        &self,
        frames: &[Frame<'_, T>],
        gt: &[Tensor<T>],
        k: &Intrinsics,
        weights: &LossWeights,
        coord: Option<&CoordDepths<T>>,
    ) -> Result<(SequenceLoss, SequenceTrace<T>)> {
        if gt.len() != frames.len() {
            return Err(Error::LengthMismatch(frames.len(), gt.len()));
        }
        let trace = self.forward_sequence(frames, k, coord)?;
        let mut frame_losses = Vec::with_capacity(frames.len());
        for (est, g) in trace.level_log_depths.iter().zip(gt) {
            let targets = self.targets(est, g)?;
            frame_losses.push(frame_loss_log(est, &targets, trace.image_size, weights)?.0);
        }
        let penalty = weights.gamma * weight_penalty(&self.params);
        let total = frame_losses.iter().sum::<f64>() / frame_losses.len() as f64 + penalty;
        Ok((
            SequenceLoss {
                total,
                frame_losses,
                penalty,
            },
            trace,
        ))
    }

    fn targets(&self, est: &[Tensor<T>], gt: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if gt.channels() != 1 {
            return Err(Error::shape("ground-truth depth must have one channel"));
        }
        let shapes: Vec<_> = est.iter().map(|e| (e.height(), e.width())).collect();
        Ok(level_targets(gt, &shapes))
    }

    fn chain_backward(
        &self,
        convs: &[Conv],
        cache: &ChainCache<T>,
        grad_out: Tensor<T>,
        activate_last: bool,
        grads: &mut Gradients<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let slope = T::lit(self.config.leaky_slope);
        let n = convs.len();
        let mut g = grad_out;
        for i in (0..n).rev() {
            if i + 1 < n || activate_last {
                g = leaky_relu_backward(&cache.pre[i], &g, slope);
            }
            let conv = convs[i];
            let cg = conv3x3_backward(&cache.inputs[i], &self.params[conv.weight], conv.stride, &g, i > 0 || need_input_grad)?;
            for (a, &b) in grads.params[conv.weight].data_mut().iter_mut().zip(&cg.weights) {
                *a += b;
            }
            for (a, &b) in grads.params[conv.bias].data_mut().iter_mut().zip(&cg.bias) {
                *a += b;
            }
            match cg.input {
                Some(x) if i > 0 => g = x,
                other => return Ok(other),
            }
        }
        Ok(None)
    }

    /// Back-propagation through time of the loss computed by
    /// [`Network::sequence_loss`]. The warp sampling depths are constants.
    pub fn backward(&self, trace: &SequenceTrace<T>, gt: &[Tensor<T>], weights: &LossWeights) -> Result<Gradients<T>> {
        let m = self.config.num_levels;
        let n_frames = trace.steps.len();
        if gt.len() != n_frames {
            return Err(Error::LengthMismatch(n_frames, gt.len()));
        }
        let range = self.config.depth_range;
        let (lo, hi) = (T::lit(range.log_min()), T::lit(range.log_max()));
        let r = self.config.cost_radius;
        let inv_frames = T::lit(1.0 / n_frames as f64);
        let mut grads = Gradients::zeros_like(self);

        // gradients w.r.t. the state emitted by step t, filled by step t + 1
        let mut g_state_feat: Vec<Option<Tensor<T>>> = vec![None; m];
        let mut g_state_depth: Vec<Option<Tensor<T>>> = vec![None; m];

        for t in (0..n_frames).rev() {
            let step = &trace.steps[t];
            let est = &trace.level_log_depths[t];
            let targets = self.targets(est, &gt[t])?;
            let (_, loss_grads) = frame_loss_log(est, &targets, trace.image_size, weights)?;

            let mut g_log: Vec<Tensor<T>> = loss_grads
                .into_iter()
                .map(|mut g| {
                    g.scale(inv_frames);
                    g
                })
                .collect();
            let mut g_feat: Vec<Tensor<T>> = step.features.iter().map(|f| Tensor::zeros(f.height(), f.width(), f.channels())).collect();
            for l in 0..m {
                if let Some(g) = g_state_feat[l].take() {
                    g_feat[l].add_assign(&g);
                }
                if let Some(g) = g_state_depth[l].take() {
                    // state depth = exp(log depth)
                    let lt = &step.levels[l].log_depth;
                    for ((a, &b), &x) in g_log[l].data_mut().iter_mut().zip(g.data()).zip(lt.data()) {
                        *a += b * x.exp();
                    }
                }
            }

            for l in 0..m {
                let lt = &step.levels[l];
                let f_cur = &step.features[l];
                let g_raw = Tensor::from_vec(
                    lt.raw.height(),
                    lt.raw.width(),
                    1,
                    lt.raw
                        .data()
                        .iter()
                        .zip(g_log[l].data())
                        .map(|(&x, &g)| if x > lo && x < hi { g } else { T::zero() })
                        .collect(),
                )?;
                let g_input = self
                    .chain_backward(&self.estimators[l], &lt.estimator, g_raw, false, &mut grads, true)?
                    .expect("estimator input gradient");

                let c = f_cur.channels();
                let cv = self.config.cost_channels();
                g_feat[l].add_assign(&g_input.channel_slice(0, c));
                let (g1, g2) = cost_volume_backward(f_cur, &lt.warped_features, r, &g_input.channel_slice(c, cv))?;
                g_feat[l].add_assign(&g1);
                let g_prev_feat = warp_backward(&lt.feat_plan, &g2)?.source;

                let g_dw_log = g_input.channel_slice(c + cv, 1);
                let g_dw = Tensor::from_vec(
                    g_dw_log.height(),
                    g_dw_log.width(),
                    1,
                    g_dw_log
                        .data()
                        .iter()
                        .zip(lt.warped_depth.data())
                        .map(|(&g, &d)| if range.passes(d) { g / d } else { T::zero() })
                        .collect(),
                )?;
                let g_prev_depth = warp_backward(&lt.depth_plan, &g_dw)?.source;

                if step.first {
                    // previous features were the current ones; the previous
                    // depth was the constant prior
                    g_feat[l].add_assign(&g_prev_feat);
                } else {
                    g_state_feat[l] = Some(g_prev_feat);
                    g_state_depth[l] = Some(g_prev_depth);
                }

                if l + 1 < m {
                    let g_up = g_input.channel_slice(c + cv + 1, 1);
                    let above = &step.levels[l + 1].log_depth;
                    let g_above = resize_bilinear_backward(&g_up, above.height(), above.width());
                    g_log[l + 1].add_assign(&g_above);
                }
            }

            for l in (0..m).rev() {
                let g = std::mem::replace(&mut g_feat[l], Tensor::zeros(0, 0, 0));
                let g_in = self.chain_backward(&self.encoder[l], &step.encoder[l], g, true, &mut grads, l > 0)?;
                if l > 0 {
                    g_feat[l - 1].add_assign(&g_in.expect("encoder input gradient"));
                }
            }
        }

        let two_gamma = T::lit(2.0 * weights.gamma);
        for (g, p) in grads.params.iter_mut().zip(&self.params) {
            if p.is_weight {
                for (a, &w) in g.data_mut().iter_mut().zip(p.values()) {
                    *a += two_gamma * w;
                }
            }
        }
        Ok(grads)
    }

    /// Loss and gradients of one sequence.
    pub fn loss_and_gradients(
        &self,
        frames: &[Frame<'_, T>],
        gt: &[Tensor<T>],
        k: &Intrinsics,
        weights: &LossWeights,
    ) -> Result<(SequenceLoss, Gradients<T>)> {
        let (loss, trace) = self.sequence_loss(frames, gt, k, weights, None)?;
        let grads = self.backward(&trace, gt, weights)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::RigidTransform;
    use crate::network::NetworkConfig;
    use nalgebra::Vector3;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            num_levels: 2,
            encoder_channels: vec![3, 4],
            estimator_channels: vec![4, 3, 1],
            cost_radius: 1,
            d_init: 8.0,
            ..Default::default()
        }
    }

    fn inputs(n: usize) -> (Vec<Tensor<f64>>, Vec<RigidTransform>, Vec<Tensor<f64>>, Intrinsics) {
        let images = (0..n)
            .map(|t| Tensor::from_fn(8, 8, 3, |y, x, c| ((y * 3 + x * 5 + c + t) as f64 * 0.37).sin()))
            .collect();
        let motions = (0..n)
            .map(|t| {
                RigidTransform::new(
                    nalgebra::Rotation3::from_scaled_axis(Vector3::new(0.01, -0.02, 0.01 * t as f64)).into_inner(),
                    Vector3::new(0.1, 0.05, 0.3),
                )
            })
            .collect();
        let gt = (0..n)
            .map(|t| Tensor::from_fn(8, 8, 1, |y, x, _| 4.0 + (y + 2 * x + t) as f64 * 0.3))
            .collect();
        (images, motions, gt, Intrinsics::centered(6.0, 8, 8).unwrap())
    }

    /// Central differences on a handful of parameters with the warp
    /// coordinates frozen.
    #[test]
    fn matches_finite_differences() {
        check_finite_differences(true);
    }

    #[test]
    fn matches_finite_differences_without_depth_transform() {
        check_finite_differences(false);
    }

    fn check_finite_differences(transform_depth: bool) {
        let cfg = NetworkConfig {
            transform_depth,
            ..small_config()
        };
        let mut net = Network::<f64>::new(cfg, 11).unwrap();
        // push the estimator output into the unclamped range
        let b = net.param_index("estimator.1.2.bias").unwrap();
        net.params[b].values_mut()[0] = 2.0;
        let b = net.param_index("estimator.2.2.bias").unwrap();
        net.params[b].values_mut()[0] = 2.0;
        let (images, motions, gt, k) = inputs(3);
        let frames: Vec<_> = images.iter().zip(&motions).map(|(image, motion)| Frame { image, motion }).collect();
        let w = LossWeights::default();
        let (_, trace) = net.sequence_loss(&frames, &gt, &k, &w, None).unwrap();
        let coord = trace.coord_depths();
        let grads = net.backward(&trace, &gt, &w).unwrap();

        let h = 1e-6;
        let mut checked = 0;
        for (pi, p) in net.params.clone().iter().enumerate() {
            for &ei in &[0, p.numel() / 2, p.numel() - 1] {
                let orig = p.values()[ei];
                net.params[pi].values_mut()[ei] = orig + h;
                let up = net.sequence_loss(&frames, &gt, &k, &w, Some(&coord)).unwrap().0.total;
                net.params[pi].values_mut()[ei] = orig - h;
                let down = net.sequence_loss(&frames, &gt, &k, &w, Some(&coord)).unwrap().0.total;
                net.params[pi].values_mut()[ei] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.params[pi].data()[ei];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    err < 1e-4 || (numeric - analytic).abs() < 1e-9,
                    "{}[{ei}]: numeric {numeric}, analytic {analytic}",
                    p.name
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn penalty_only_counts_weights() {
        let net = Network::<f64>::new(small_config(), 1).unwrap();
        let (images, motions, gt, k) = inputs(1);
        let frames = [Frame {
            image: &images[0],
            motion: &motions[0],
        }];
        let w = LossWeights::default();
        let (loss, _) = net.sequence_loss(&frames, &gt, &k, &w, None).unwrap();
        let expected: f64 = net.params.iter().filter(|p| p.is_weight).map(|p| p.value.sum_squares()).sum::<f64>() * w.gamma;
        assert!((loss.penalty - expected).abs() < 1e-15);
        assert!((loss.total - loss.frame_losses[0] - loss.penalty).abs() < 1e-12);
    }
}
