//! 3x3 convolution with zero padding of one pixel, lowered to a matrix
//! product over an im2col buffer.
//!
//! Kernels are stored as `[3, 3, c_in, c_out]` row-major, which is exactly
//! the `(9 * c_in) x c_out` matrix the product needs.

use super::{ParamTensor, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

pub fn conv_output_size(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

fn check(input_channels: usize, weights: &ParamTensor<impl Real>, bias: &ParamTensor<impl Real>, stride: usize) -> Result<usize> {
    if stride != 1 && stride != 2 {
        return Err(Error::shape(format!("conv3x3 stride must be 1 or 2, got {stride}")));
    }
    let [kh, kw, c_in, c_out] = weights.dims[..] else {
        return Err(Error::shape(format!("conv3x3 kernel dims {:?}", weights.dims)));
    };
    if kh != 3 || kw != 3 || c_in != input_channels {
        return Err(Error::shape(format!(
            "conv3x3 kernel {:?} for {input_channels} input channels",
            weights.dims
        )));
    }
    if bias.numel() != c_out {
        return Err(Error::shape(format!("bias of {} for {c_out} filters", bias.numel())));
    }
    Ok(c_out)
}

fn im2col<T: Real>(input: &Tensor<T>, stride: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let (h, w, c) = input.shape();
    let row_len = 9 * c;
    let mut cols = vec![T::zero(); out_h * out_w * row_len];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &mut cols[(oy * out_w + ox) * row_len..][..row_len];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(input.pixel(iy as usize, ix as usize));
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], h: usize, w: usize, c: usize, stride: usize, out_h: usize, out_w: usize) -> Tensor<T> {
    let mut grad = Tensor::zeros(h, w, c);
    let row_len = 9 * c;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &cols[(oy * out_w + ox) * row_len..][..row_len];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &row[(ky * 3 + kx) * c..][..c];
                    for (g, &v) in grad.pixel_mut(iy as usize, ix as usize).iter_mut().zip(src) {
                        *g += v;
                    }
                }
            }
        }
    }
    grad
}

pub fn conv3x3<T: Real>(
    input: &Tensor<T>,
    weights: &ParamTensor<T>,
    bias: &ParamTensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let c_out = check(input.channels(), weights, bias, stride)?;
    let out_h = conv_output_size(input.height(), stride);
    let out_w = conv_output_size(input.width(), stride);
    let k = 9 * input.channels();
    let pixels = out_h * out_w;
    let cols = im2col(input, stride, out_h, out_w);

    let mut out = Vec::with_capacity(pixels * c_out);
    for _ in 0..pixels {
        out.extend_from_slice(bias.values());
    }
    T::gemm(
        pixels,
        k,
        c_out,
        T::one(),
        &cols,
        k as isize,
        1,
        weights.values(),
        c_out as isize,
        1,
        T::one(),
        &mut out,
        c_out as isize,
        1,
    );
    let out = Tensor::from_vec(out_h, out_w, c_out, out)?;
    out.debug_check_finite("conv3x3");
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of `conv3x3` given the gradient of its output.
pub fn conv3x3_backward<T: Real>(
    input: &Tensor<T>,
    weights: &ParamTensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let c_out = *weights.dims.last().unwrap_or(&0);
    let out_h = conv_output_size(input.height(), stride);
    let out_w = conv_output_size(input.width(), stride);
    if grad_out.shape() != (out_h, out_w, c_out) {
        return Err(Error::shape(format!(
            "conv3x3 output gradient {:?}, expected {:?}",
            grad_out.shape(),
            (out_h, out_w, c_out)
        )));
    }
    let c_in = input.channels();
    let k = 9 * c_in;
    let pixels = out_h * out_w;
    let cols = im2col(input, stride, out_h, out_w);
    let g = grad_out.data();

    let mut grad_w = vec![T::zero(); k * c_out];
    // dW = cols^T * dY
    T::gemm(
        k,
        pixels,
        c_out,
        T::one(),
        &cols,
        1,
        k as isize,
        g,
        c_out as isize,
        1,
        T::zero(),
        &mut grad_w,
        c_out as isize,
        1,
    );

    let mut grad_b = vec![T::zero(); c_out];
    for px in g.chunks_exact(c_out) {
        for (b, &v) in grad_b.iter_mut().zip(px) {
            *b += v;
        }
    }

    let grad_in = if need_input_grad {
        let mut grad_cols = vec![T::zero(); pixels * k];
        // dCols = dY * W^T
        T::gemm(
            pixels,
            c_out,
            k,
            T::one(),
            g,
            c_out as isize,
            1,
            weights.values(),
            1,
            c_out as isize,
            T::zero(),
            &mut grad_cols,
            k as isize,
            1,
        );
        Some(col2im(
            &grad_cols,
            input.height(),
            input.width(),
            c_in,
            stride,
            out_h,
            out_w,
        ))
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(c_in: usize, c_out: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> ParamTensor<f64> {
        let mut v = Vec::new();
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..c_in {
                    for co in 0..c_out {
                        v.push(f(ky, kx, ci, co));
                    }
                }
            }
        }
        ParamTensor::new("w", vec![3, 3, c_in, c_out], v, true)
    }

    fn zero_bias(n: usize) -> ParamTensor<f64> {
        ParamTensor::new("b", vec![n], vec![0.0; n], false)
    }

    /// Direct six-loop convolution used as the reference.
    fn naive(input: &Tensor<f64>, w: &ParamTensor<f64>, b: &ParamTensor<f64>, stride: usize) -> Tensor<f64> {
        let c_in = input.channels();
        let c_out = w.dims[3];
        let oh = input.height().div_ceil(stride);
        let ow = input.width().div_ceil(stride);
        Tensor::from_fn(oh, ow, c_out, |oy, ox, co| {
            let mut acc = b.values()[co];
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    let ix = (ox * stride + kx) as isize - 1;
                    if iy < 0 || ix < 0 || iy >= input.height() as isize || ix >= input.width() as isize {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += input.at(iy as usize, ix as usize, ci)
                            * w.values()[((ky * 3 + kx) * c_in + ci) * c_out + co];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = Tensor::<f64>::from_fn(5, 4, 2, |y, x, c| (y * 7 + x * 3 + c) as f64 - 4.5);
        let w = kernel(2, 2, |ky, kx, ci, co| if ky == 1 && kx == 1 && ci == co { 1.0 } else { 0.0 });
        let out = conv3x3(&input, &w, &zero_bias(2), 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_on_constant_interior() {
        let input = Tensor::<f64>::full(5, 5, 1, 5.0);
        let w = kernel(1, 1, |_, _, _, _| 1.0);
        let out = conv3x3(&input, &w, &zero_bias(1), 1).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(out.at(y, x, 0), 45.0);
            }
        }
        // corners only see four in-frame pixels under zero padding
        assert_eq!(out.at(0, 0, 0), 20.0);
    }

    #[test]
    fn stride_two_rounds_up() {
        let input = Tensor::<f64>::full(7, 6, 3, 1.0);
        let w = kernel(3, 4, |_, _, _, _| 0.1);
        let out = conv3x3(&input, &w, &zero_bias(4), 2).unwrap();
        assert_eq!(out.shape(), (4, 3, 4));
    }

    #[test]
    fn matches_naive_loops() {
        for stride in [1, 2] {
            let input = Tensor::<f64>::from_fn(7, 5, 3, |y, x, c| ((y * 31 + x * 17 + c * 7) % 11) as f64 - 5.0);
            let w = kernel(3, 4, |ky, kx, ci, co| ((ky * 5 + kx * 3 + ci * 2 + co) % 7) as f64 * 0.25 - 0.7);
            let b = ParamTensor::new("b", vec![4], vec![0.5, -1.0, 0.0, 2.0], false);
            let fast = conv3x3(&input, &w, &b, stride).unwrap();
            let slow = naive(&input, &w, &b, stride);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let input = Tensor::<f64>::zeros(4, 4, 2);
        let w = kernel(3, 1, |_, _, _, _| 0.0);
        assert!(matches!(conv3x3(&input, &w, &zero_bias(1), 1), Err(Error::ShapeMismatch(_))));
        let w = kernel(2, 1, |_, _, _, _| 0.0);
        assert!(matches!(conv3x3(&input, &w, &zero_bias(1), 3), Err(Error::ShapeMismatch(_))));
    }
}
