//! A learning-free depth baseline: match features along the cost volume and
//! triangulate the match with the known camera motion.

use nalgebra::Vector3;

use crate::camera::{reproject_coords, Intrinsics, PixelCoord, RigidTransform, MIN_Z};
use crate::error::{Error, Result};
use crate::layers::{channel_offset, cost_volume};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationParams {
    /// Search radius of the cost volume (pixels).
    pub radius: usize,
    /// Pixels whose translation-induced displacement is smaller than this
    /// (pixels) keep the hypothesis.
    pub min_parallax: f64,
    /// Refine the best integer offset to 1/128 pixel. Sub-pixel residuals are
    /// then corrected even when the best integer offset is zero.
    pub subpixel: bool,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        TriangulationParams {
            radius: 4,
            min_parallax: 0.5,
            subpixel: true,
        }
    }
}

/// Per-pixel patch vectors of `image`: the `(2 radius + 1)^2` neighbours
/// (edge-replicated) of every channel, mean-subtracted and scaled to unit
/// norm. Dot products of these are normalised cross-correlations.
pub fn patch_descriptors<T: Real>(image: &Tensor<T>, radius: usize) -> Tensor<T> {
    let (h, w, c) = image.shape();
    let side = 2 * radius + 1;
    let len = side * side * c;
    let mut out = Tensor::zeros(h, w, len);
    let mut buf = vec![0.0f64; len];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in 0..side {
                let yy = (y + dy).saturating_sub(radius).min(h - 1);
                for dx in 0..side {
                    let xx = (x + dx).saturating_sub(radius).min(w - 1);
                    for &v in image.pixel(yy, xx) {
                        buf[n] = v.f64();
                        n += 1;
                    }
                }
            }
            let mean = buf.iter().sum::<f64>() / len as f64;
            buf.iter_mut().for_each(|v| *v -= mean);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (o, v) in out.pixel_mut(y, x).iter_mut().zip(&buf) {
                    *o = T::lit(v / norm);
                }
            }
        }
    }
    out
}

/// Normalised correlation of `x1` with `map` bilinearly sampled at `(x, y)`.
fn sampled_score<T: Real>(x1: &[T], map: &Tensor<T>, x: f64, y: f64, sample: &mut [f64]) -> f64 {
    let (h, w, _) = map.shape();
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1i, y1i) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let taps = [
        ((1.0 - fy) * (1.0 - fx), y0, x0),
        ((1.0 - fy) * fx, y0, x1i),
        (fy * (1.0 - fx), y1i, x0),
        (fy * fx, y1i, x1i),
    ];
    sample.iter_mut().for_each(|v| *v = 0.0);
    for (wt, yy, xx) in taps {
        for (s, &v) in sample.iter_mut().zip(map.pixel(yy, xx)) {
            *s += wt * v.f64();
        }
    }
    let norm = sample.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    x1.iter().zip(sample.iter()).map(|(a, b)| a.f64() * b).sum::<f64>() / norm
}

/// Maximise the correlation of `x1` with `map` bilinearly interpolated
/// within one pixel of `(i, j)`: a 1/16 pixel grid, then 1/128 pixel
/// around its best point.
fn refine_match<T: Real>(x1: &[T], map: &Tensor<T>, i: f64, j: f64) -> (f64, f64) {
    let (h, w, c) = map.shape();
    let mut sample = vec![0.0f64; c];
    let mut best = (f64::NEG_INFINITY, i, j);
    for (step, reach) in [(1.0 / 16.0, 16), (1.0 / 128.0, 8)] {
        let (ci, cj) = if best.0.is_finite() { (best.1, best.2) } else { (i, j) };
        for sy in -reach..=reach {
            let y = cj + sy as f64 * step;
            if y < 0.0 || y > (h - 1) as f64 {
                continue;
            }
            for sx in -reach..=reach {
                let x = ci + sx as f64 * step;
                if x < 0.0 || x > (w - 1) as f64 {
                    continue;
                }
                let score = sampled_score(x1, map, x, y, &mut sample);
                if score > best.0 {
                    best = (score, x, y);
                }
            }
        }
    }
    (best.1, best.2)
}

/// Bilinear sample of a single-channel map, clamped to the frame.
fn bilinear(map: &Tensor<f64>, i: f64, j: f64) -> f64 {
    let (h, w, _) = map.shape();
    let i = i.clamp(0.0, (w - 1) as f64);
    let j = j.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (i.floor() as usize, j.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (i - x0 as f64, j - y0 as f64);
    (1.0 - fy) * ((1.0 - fx) * map.at(y0, x0, 0) + fx * map.at(y0, x1, 0))
        + fy * ((1.0 - fx) * map.at(y1, x0, 0) + fx * map.at(y1, x1, 0))
}

/// Depth by matching `f_t` against `f_prev_warped` (previous features
/// warped into the current view with `d_hypothesis`) and solving for the
/// depth that reprojects each pixel onto its match.
///
/// For the current ray `a = R ray(p)` and translation `t`, the previous-frame
/// match `q` gives two equations `A d = B` per axis, solved in the least
/// squares sense: `d = sum(A B) / sum(A^2)`.
pub fn triangulate_analytic<T: Real>(
    f_t: &Tensor<T>,
    f_prev_warped: &Tensor<T>,
    d_hypothesis: &Tensor<T>,
    motion: &RigidTransform,
    k_level: &Intrinsics,
    params: &TriangulationParams,
) -> Result<Tensor<T>> {
    let t = motion.translation;
    if !(t.norm() > 1e-6) {
        return Err(Error::DegenerateMotion(t.norm()));
    }
    k_level.require_square_unskewed()?;
    let (h, w, _) = f_t.shape();
    if d_hypothesis.shape() != (h, w, 1) || (k_level.height, k_level.width) != (h, w) {
        return Err(Error::shape(format!(
            "features {:?}, hypothesis {:?}, intrinsics {}x{}",
            f_t.shape(),
            d_hypothesis.shape(),
            k_level.height,
            k_level.width
        )));
    }
    let r = params.radius;
    let cv = cost_volume(f_t, f_prev_warped, r)?;
    let hyp: Tensor<f64> = d_hypothesis.cast();
    let f = k_level.fx;
    let side = 2 * r + 1;
    let centre = r * side + r;

    let mut out = d_hypothesis.clone();
    for y in 0..h {
        for x in 0..w {
            let d0 = hyp.at(y, x, 0);
            let costs = cv.pixel(y, x);
            let mut best = centre;
            for (ch, &c) in costs.iter().enumerate() {
                if c > costs[best] {
                    best = ch;
                }
            }
            if best == centre && !params.subpixel {
                continue;
            }
            let (dj, di) = channel_offset(r, best);
            let (mut si, mut sj) = (x as f64 + di as f64, y as f64 + dj as f64);
            if params.subpixel {
                (si, sj) = refine_match(f_t.pixel(y, x), f_prev_warped, si, sj);
                if (si, sj) == (x as f64, y as f64) {
                    continue;
                }
            }
            let p = PixelCoord::new(x as f64, y as f64);
            let Ok(parallax) = translation_parallax(p, d0, motion, k_level) else {
                continue;
            };
            if parallax < params.min_parallax {
                continue;
            }
            let d_match = bilinear(&hyp, si, sj);
            let Ok((q, _)) = reproject_coords(PixelCoord::new(si, sj), d_match, motion, k_level) else {
                continue;
            };
            let ray = Vector3::new((p.i - k_level.cx) / f, (p.j - k_level.cy) / f, 1.0);
            let a = motion.rotation * ray;
            let (qi, qj) = (q.i - k_level.cx, q.j - k_level.cy);
            let rows = [
                (f * a.x - qi * a.z, qi * t.z - f * t.x),
                (f * a.y - qj * a.z, qj * t.z - f * t.y),
            ];
            let num: f64 = rows.iter().map(|(a, b)| a * b).sum();
            let den: f64 = rows.iter().map(|(a, _)| a * a).sum();
            let d = num / den;
            if den > 0.0 && d.is_finite() && d > MIN_Z {
                out.set(y, x, 0, T::lit(d));
            }
        }
    }
    Ok(out)
}

/// Pixel displacement caused by the translation alone: the distance between
/// the reprojection at depth `d` and at infinity.
fn translation_parallax(p: PixelCoord, d: f64, motion: &RigidTransform, k: &Intrinsics) -> Result<f64> {
    let (q, _) = reproject_coords(p, d, motion, k)?;
    let rot_only = RigidTransform::new(motion.rotation, Vector3::zeros());
    let (q_inf, _) = reproject_coords(p, d, &rot_only, k)?;
    Ok(((q.i - q_inf.i).powi(2) + (q.j - q_inf.j).powi(2)).sqrt())
}
