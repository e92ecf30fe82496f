//! Correlation cost volume.
//!
//! For every pixel of `f1` the volume stores the correlation with each
//! feature vector of `f2` inside a `(2r+1) x (2r+1)` window centred on the
//! same location. Channels are ordered row-major over the (vertical,
//! horizontal) offset, both running from `-r` to `r`; the centre offset is
//! channel `r * (2r + 1) + r`. Neighbours outside the frame cost zero.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `(1/L) x1 . x2`, accumulated in 64 bits.
pub fn cost<T: Real>(x1: &[T], x2: &[T]) -> Result<T> {
    if x1.len() != x2.len() || x1.is_empty() {
        return Err(Error::LengthMismatch(x1.len(), x2.len()));
    }
    Ok(T::lit(dot(x1, x2) / x1.len() as f64))
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.f64() * y.f64()).sum()
}

/// Channel index of offset (`dj` rows, `di` columns).
pub fn offset_channel(r: usize, dj: isize, di: isize) -> usize {
    let side = 2 * r as isize + 1;
    ((dj + r as isize) * side + (di + r as isize)) as usize
}

/// Inverse of [`offset_channel`]: `(dj, di)`.
pub fn channel_offset(r: usize, channel: usize) -> (isize, isize) {
    let side = 2 * r + 1;
    (
        (channel / side) as isize - r as isize,
        (channel % side) as isize - r as isize,
    )
}

pub fn cost_volume<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    f1.expect_shape(f2, "cost volume inputs")?;
    let (h, w, l) = f1.shape();
    if l == 0 {
        return Err(Error::LengthMismatch(0, 0));
    }
    let side = 2 * r + 1;
    let len = l as f64;
    let mut out = Tensor::zeros(h, w, side * side);
    for y in 0..h {
        for x in 0..w {
            let a = f1.pixel(y, x);
            let px = out.pixel_mut(y, x);
            for dj in -(r as isize)..=r as isize {
                let yy = y as isize + dj;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for di in -(r as isize)..=r as isize {
                    let xx = x as isize + di;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let b = f2.pixel(yy as usize, xx as usize);
                    px[offset_channel(r, dj, di)] = T::lit(dot(a, b) / len);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients with respect to `f1` and `f2`.
pub fn cost_volume_backward<T: Real>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    r: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    f1.expect_shape(f2, "cost volume inputs")?;
    let (h, w, l) = f1.shape();
    let side = 2 * r + 1;
    if grad_out.shape() != (h, w, side * side) {
        return Err(Error::shape(format!(
            "cost volume gradient {:?} for inputs {:?} and r = {r}",
            grad_out.shape(),
            f1.shape()
        )));
    }
    let inv_l = T::lit(1.0 / l as f64);
    let mut g1 = Tensor::zeros(h, w, l);
    let mut g2 = Tensor::zeros(h, w, l);
    for y in 0..h {
        for x in 0..w {
            let g = grad_out.pixel(y, x);
            for dj in -(r as isize)..=r as isize {
                let yy = y as isize + dj;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for di in -(r as isize)..=r as isize {
                    let xx = x as isize + di;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let gv = g[offset_channel(r, dj, di)] * inv_l;
                    if gv == T::zero() {
                        continue;
                    }
                    let (yy, xx) = (yy as usize, xx as usize);
                    for c in 0..l {
                        let a = f1.at(y, x, c);
                        let b = f2.at(yy, xx, c);
                        let i1 = g1.index(y, x, c);
                        g1.data_mut()[i1] += gv * b;
                        let i2 = g2.index(yy, xx, c);
                        g2.data_mut()[i2] += gv * a;
                    }
                }
            }
        }
    }
    Ok((g1, g2))
}
