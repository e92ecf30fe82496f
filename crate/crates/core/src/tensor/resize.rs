//! Resampling with the half-pixel ("align corners = false") convention.

use super::Tensor;
use crate::real::Real;

/// Source coordinate and the two taps for output index `dst`.
#[inline]
fn taps(dst: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

pub fn resize_bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    assert!(out_h >= 1 && out_w >= 1, "resize to an empty size");
    let (h, w, c) = input.shape();
    if (h, w) == (out_h, out_w) {
        return input.clone();
    }
    let ytaps: Vec<_> = (0..out_h).map(|y| taps(y, h, out_h)).collect();
    let xtaps: Vec<_> = (0..out_w).map(|x| taps(x, w, out_w)).collect();
    let mut out = Tensor::zeros(out_h, out_w, c);
    for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
        let fy = T::lit(fy);
        for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
            let fx = T::lit(fx);
            let one = T::one();
            let (w00, w01, w10, w11) = ((one - fy) * (one - fx), (one - fy) * fx, fy * (one - fx), fy * fx);
            for ch in 0..c {
                let v = w00 * input.at(y0, x0, ch)
                    + w01 * input.at(y0, x1, ch)
                    + w10 * input.at(y1, x0, ch)
                    + w11 * input.at(y1, x1, ch);
                out.set(oy, ox, ch, v);
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients onto the input grid.
pub fn resize_bilinear_backward<T: Real>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let (out_h, out_w, c) = grad_out.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return grad_out.clone();
    }
    let mut g = Tensor::zeros(in_h, in_w, c);
    for oy in 0..out_h {
        let (y0, y1, fy) = taps(oy, in_h, out_h);
        let fy = T::lit(fy);
        for ox in 0..out_w {
            let (x0, x1, fx) = taps(ox, in_w, out_w);
            let fx = T::lit(fx);
            let one = T::one();
            for ch in 0..c {
                let v = grad_out.at(oy, ox, ch);
                let d = g.data_mut();
                let idx = |y: usize, x: usize| (y * in_w + x) * c + ch;
                d[idx(y0, x0)] += v * (one - fy) * (one - fx);
                d[idx(y0, x1)] += v * (one - fy) * fx;
                d[idx(y1, x0)] += v * fy * (one - fx);
                d[idx(y1, x1)] += v * fy * fx;
            }
        }
    }
    g
}

pub fn resize_nearest<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    assert!(out_h >= 1 && out_w >= 1, "resize to an empty size");
    let (h, w, c) = input.shape();
    let pick = |dst: usize, n_in: usize, n_out: usize| {
        ((((dst as f64) + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
    };
    let mut out = Tensor::zeros(out_h, out_w, c);
    for oy in 0..out_h {
        let sy = pick(oy, h, out_h);
        for ox in 0..out_w {
            let sx = pick(ox, w, out_w);
            out.pixel_mut(oy, ox).copy_from_slice(input.pixel(sy, sx));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upscale_row_by_two() {
        let row = Tensor::<f64>::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let up = resize_bilinear(&row, 1, 4);
        assert_eq!(up.data(), &[1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn constants_stay_constant() {
        let t = Tensor::<f32>::full(5, 7, 2, 3.0);
        for (h, w) in [(1, 1), (3, 9), (10, 14), (5, 7)] {
            assert!(resize_bilinear(&t, h, w).data().iter().all(|&v| (v - 3.0).abs() < 1e-6));
            assert!(resize_nearest(&t, h, w).data().iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn identity_size_is_exact_copy() {
        let t = Tensor::<f32>::from_fn(4, 6, 3, |y, x, c| (y * 13 + x * 5 + c) as f32 * 0.37);
        assert_eq!(resize_nearest(&t, 4, 6), t);
        assert_eq!(resize_bilinear(&t, 4, 6), t);
    }

    #[test]
    fn nearest_downscale_picks_block_centres() {
        let t = Tensor::<f32>::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32);
        let d = resize_nearest(&t, 2, 2);
        assert_eq!(d.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn backward_is_adjoint() {
        // <resize(x), g> == <x, resize_backward(g)>
        let x = Tensor::<f64>::from_fn(3, 5, 2, |y, x, c| ((y * 7 + x * 3 + c * 11) % 13) as f64 - 6.0);
        let g = Tensor::<f64>::from_fn(6, 10, 2, |y, x, c| ((y * 5 + x * 2 + c) % 9) as f64 * 0.5 - 2.0);
        let fx = resize_bilinear(&x, 6, 10);
        let lhs: f64 = fx.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let bx = resize_bilinear_backward(&g, 3, 5);
        let rhs: f64 = x.data().iter().zip(bx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
