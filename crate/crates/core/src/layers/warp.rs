//! Spatial reprojection of a map from the previous frame into the current one.
//!
//! Every target pixel is back-projected with its depth, moved into the
//! previous camera frame and projected there; the source map is then sampled
//! bilinearly at that (generally fractional) location. Samples that fall
//! outside the source frame, or whose point ends up behind the previous
//! camera, are zero and flagged invalid.
//!
//! Gradients flow into the sampled map only. The depth that drives the
//! sampling coordinates is treated as a constant: its gradient is defined to
//! be zero, which keeps training stable.

use nalgebra::Vector3;

use crate::camera::{reproject_coords, Intrinsics, PixelCoord, RigidTransform, MIN_Z};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct WarpResult<T> {
    pub warped: Tensor<T>,
    /// `H x W x 1`, 1 where the sample is valid, 0 elsewhere.
    pub validity: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
    wx: f64,
    wy: f64,
    /// Depth re-expression `a * sampled - b`; `(1, 0)` for plain features.
    a: f64,
    b: f64,
}

/// Sampling locations recorded by the forward pass, reused by the backward.
#[derive(Debug, Clone)]
pub struct WarpPlan {
    height: usize,
    width: usize,
    channels: usize,
    samples: Vec<Option<Sample>>,
}

impl WarpPlan {
    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct WarpGrads<T> {
    pub source: Tensor<T>,
    /// Always the zero tensor: the sampling depth does not receive gradient.
    pub depth: Tensor<T>,
}

/// Bilinear taps for a continuous coordinate, or `None` outside `[0, n-1]`.
#[inline]
fn taps(v: f64, n: usize) -> Option<(u32, u32, f64)> {
    if !(v >= 0.0 && v <= (n - 1) as f64) {
        return None;
    }
    let v0 = (v.floor() as usize).min(n - 1);
    let v1 = (v0 + 1).min(n - 1);
    let frac = v - v0 as f64;
    Some((v0 as u32, v1 as u32, frac))
}

/// Warp `source_prev` (a map at time `t-1`) into the current frame using the
/// current depth estimate `depth_t`.
///
/// With `transform_depth_values`, `source_prev` must be a single-channel
/// depth map; each sampled depth is re-expressed as a z-distance in the
/// current camera frame.
pub fn warp<T: Real>(
    source_prev: &Tensor<T>,
    depth_t: &Tensor<T>,
    motion: &RigidTransform,
    k: &Intrinsics,
    transform_depth_values: bool,
) -> Result<(WarpResult<T>, WarpPlan)> {
    let (h, w, c) = source_prev.shape();
    if depth_t.shape() != (h, w, 1) {
        return Err(Error::shape(format!(
            "warp depth {:?} for source {:?}",
            depth_t.shape(),
            source_prev.shape()
        )));
    }
    if (k.height, k.width) != (h, w) {
        return Err(Error::shape(format!(
            "intrinsics for {}x{} used on a {h}x{w} map",
            k.height, k.width
        )));
    }
    if transform_depth_values && c != 1 {
        return Err(Error::shape(format!("depth re-expression needs 1 channel, got {c}")));
    }
    // z of a previous-frame point in the current frame: col3(R) . (P - t)
    let r3 = motion.rotation.column(2).into_owned();
    let t = motion.translation;
    let b = r3.dot(&t);

    let mut samples = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d = depth_t.at(y, x, 0).f64();
            let sample = match reproject_coords(PixelCoord::new(x as f64, y as f64), d, motion, k) {
                Ok((p, _)) => match (taps(p.i, w), taps(p.j, h)) {
                    (Some((x0, x1, wx)), Some((y0, y1, wy))) => {
                        let (a, b) = if transform_depth_values {
                            let ray = Vector3::new((p.i - k.cx) / k.fx, (p.j - k.cy) / k.fy, 1.0);
                            (r3.dot(&ray), b)
                        } else {
                            (1.0, 0.0)
                        };
                        Some(Sample { x0, y0, x1, y1, wx, wy, a, b })
                    }
                    _ => None,
                },
                Err(Error::BehindCamera(_)) => None,
                Err(e) => return Err(e),
            };
            samples.push(sample);
        }
    }

    let mut warped = Tensor::zeros(h, w, c);
    let mut validity = Tensor::zeros(h, w, 1);
    for (idx, sample) in samples.iter_mut().enumerate() {
        let Some(s) = sample else { continue };
        let (y, x) = (idx / w, idx % w);
        let (wx, wy) = (T::lit(s.wx), T::lit(s.wy));
        let one = T::one();
        let weights = [
            ((one - wy) * (one - wx), s.y0, s.x0),
            ((one - wy) * wx, s.y0, s.x1),
            (wy * (one - wx), s.y1, s.x0),
            (wy * wx, s.y1, s.x1),
        ];
        let out = warped.pixel_mut(y, x);
        for ch in 0..c {
            let mut v = T::zero();
            for &(wt, sy, sx) in &weights {
                v += wt * source_prev.at(sy as usize, sx as usize, ch);
            }
            out[ch] = v;
        }
        if transform_depth_values {
            let z = s.a * out[0].f64() - s.b;
            if z > MIN_Z {
                out[0] = T::lit(z);
            } else {
                out[0] = T::zero();
                *sample = None;
                continue;
            }
        }
        validity.set(y, x, 0, one);
    }
    warped.debug_check_finite("warp");
    Ok((
        WarpResult { warped, validity },
        WarpPlan {
            height: h,
            width: w,
            channels: c,
            samples,
        },
    ))
}

pub fn warp_backward<T: Real>(plan: &WarpPlan, grad_warped: &Tensor<T>) -> Result<WarpGrads<T>> {
    let (h, w, c) = (plan.height, plan.width, plan.channels);
    if grad_warped.shape() != (h, w, c) {
        return Err(Error::shape(format!(
            "warp gradient {:?}, expected {:?}",
            grad_warped.shape(),
            (h, w, c)
        )));
    }
    let mut source = Tensor::zeros(h, w, c);
    for (idx, sample) in plan.samples.iter().enumerate() {
        let Some(s) = sample else { continue };
        let (y, x) = (idx / w, idx % w);
        let (wx, wy) = (T::lit(s.wx), T::lit(s.wy));
        let a = T::lit(s.a);
        let one = T::one();
        let weights = [
            ((one - wy) * (one - wx), s.y0, s.x0),
            ((one - wy) * wx, s.y0, s.x1),
            (wy * (one - wx), s.y1, s.x0),
            (wy * wx, s.y1, s.x1),
        ];
        for ch in 0..c {
            let g = grad_warped.at(y, x, ch) * a;
            if g == T::zero() {
                continue;
            }
            for &(wt, sy, sx) in &weights {
                let i = source.index(sy as usize, sx as usize, ch);
                source.data_mut()[i] += wt * g;
            }
        }
    }
    Ok(WarpGrads {
        source,
        depth: Tensor::zeros(h, w, 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(w: usize, h: usize) -> Intrinsics {
        Intrinsics::centered(20.0, w, h).unwrap()
    }

    #[test]
    fn identity_motion_is_bit_exact() {
        let src = Tensor::<f32>::from_fn(9, 11, 3, |y, x, c| ((y * 17 + x * 5 + c * 3) % 23) as f32 * 0.173 - 1.0);
        let depth = Tensor::<f32>::from_fn(9, 11, 1, |y, x, _| 1.0 + (y + x) as f32 * 0.7);
        let (res, plan) = warp(&src, &depth, &RigidTransform::identity(), &k(11, 9), false).unwrap();
        assert_eq!(res.warped, src);
        assert!(res.validity.data().iter().all(|&v| v == 1.0));
        assert_eq!(plan.valid_count(), 99);
    }

    #[test]
    fn identity_motion_keeps_depth_values() {
        let depth = Tensor::<f64>::from_fn(6, 6, 1, |y, x, _| 2.0 + (y * 6 + x) as f64 * 0.25);
        let (res, _) = warp(&depth, &depth, &RigidTransform::identity(), &k(6, 6), true).unwrap();
        assert_eq!(res.warped, depth);
    }

    #[test]
    fn out_of_frame_is_zero_and_invalid() {
        // shift by f * tx / d = 20 * 1 / 10 = 2 px to the right in the source
        let src = Tensor::<f64>::full(4, 6, 2, 3.0);
        let depth = Tensor::<f64>::full(4, 6, 1, 10.0);
        let motion = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let (res, _) = warp(&src, &depth, &motion, &k(6, 4), false).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                let valid = x + 2 <= 5;
                assert_eq!(res.validity.at(y, x, 0), if valid { 1.0 } else { 0.0 });
                assert_eq!(res.warped.at(y, x, 0), if valid { 3.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn behind_camera_is_invalid() {
        let src = Tensor::<f64>::full(4, 4, 1, 1.0);
        let depth = Tensor::<f64>::full(4, 4, 1, 5.0);
        let motion = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -6.0));
        let (res, plan) = warp(&src, &depth, &motion, &k(4, 4), false).unwrap();
        assert_eq!(plan.valid_count(), 0);
        assert!(res.warped.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_translation_re_expresses_depth() {
        // camera moved 1 m forward: prev = cur + (0, 0, 1), so a surface at
        // 11 m in the previous frame is 10 m away now.
        let prev_depth = Tensor::<f64>::full(5, 5, 1, 11.0);
        let depth_t = Tensor::<f64>::full(5, 5, 1, 10.0);
        let motion = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let (res, _) = warp(&prev_depth, &depth_t, &motion, &k(5, 5), true).unwrap();
        assert!((res.warped.at(2, 2, 0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn backward_is_adjoint_and_depth_gradient_is_zero() {
        let src = Tensor::<f64>::from_fn(7, 8, 2, |y, x, c| ((y * 3 + x * 5 + c) % 7) as f64 - 3.0);
        let depth = Tensor::<f64>::from_fn(7, 8, 1, |y, x, _| 4.0 + 0.3 * y as f64 + 0.2 * x as f64);
        let motion = RigidTransform::from_axis_angle(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.3, -0.1, 0.2));
        let (res, plan) = warp(&src, &depth, &motion, &k(8, 7), false).unwrap();
        let g = Tensor::<f64>::from_fn(7, 8, 2, |y, x, c| ((y * 7 + x + c * 2) % 5) as f64 * 0.5 - 1.0);
        let grads = warp_backward(&plan, &g).unwrap();
        let lhs: f64 = res.warped.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.data().iter().zip(grads.source.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!(grads.depth.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let src = Tensor::<f32>::zeros(4, 4, 2);
        let depth = Tensor::<f32>::full(4, 5, 1, 1.0);
        assert!(matches!(
            warp(&src, &depth, &RigidTransform::identity(), &k(4, 4), false),
            Err(Error::ShapeMismatch(_))
        ));
        let depth = Tensor::<f32>::full(4, 4, 1, 1.0);
        assert!(matches!(
            warp(&src, &depth, &RigidTransform::identity(), &k(4, 4), true),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
