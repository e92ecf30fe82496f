//! Dense `H x W x C` tensors and the fixed set of differentiable kernels the
//! network is built from.
//!
//! Storage is row-major with the channel index fastest, so a pixel's feature
//! vector is a contiguous slice. Every kernel that has a backward pass
//! exposes it as a free function next to the forward one.

mod activation;
mod checkpoint;
mod conv;
mod init;
mod logdepth;
mod optim;
mod resize;

pub use activation::{leaky_relu, leaky_relu_backward};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use conv::{conv3x3, conv3x3_backward, conv_output_size, ConvGrads};
pub use init::he_init;
pub use logdepth::{log_depth_decode, log_depth_encode, DepthRange};
pub use optim::{Adam, AdamState};
pub use resize::{resize_bilinear, resize_bilinear_backward, resize_nearest};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::full(height, width, channels, T::zero())
    }

    pub fn full(height: usize, width: usize, channels: usize, value: T) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Feature vector of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn expect_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.f64()).expect("finite value"))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extract channel range `[start, start + count)`.
    pub fn channel_slice(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.channels, "channel slice out of range");
        let mut out = Vec::with_capacity(self.height * self.width * count);
        for px in self.data.chunks_exact(self.channels) {
            out.extend_from_slice(&px[start..start + count]);
        }
        Tensor {
            height: self.height,
            width: self.width,
            channels: count,
            data: out,
        }
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concatenating zero tensors"))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(Error::shape(format!(
                "concat {}x{} with {}x{}",
                h, w, bad.height, bad.width
            )));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Ok(Tensor {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Sum of squares accumulated in 64 bits.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&v| v.f64() * v.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    #[inline]
    pub(crate) fn debug_check_finite(&self, kernel: &str) {
        debug_assert!(self.all_finite(), "{kernel} produced a non-finite value");
    }
}

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamTensor<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Conv kernels are regularised; biases are not.
    pub is_weight: bool,
    /// Logical shape, e.g. `[3, 3, c_in, c_out]` for a conv kernel.
    pub dims: Vec<usize>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, value: Vec<T>, is_weight: bool) -> Self {
        let n: usize = dims.iter().product();
        assert_eq!(n, value.len(), "parameter data does not match its dims");
        let value = Tensor::from_vec(1, 1, n, value).expect("length checked");
        let grad = Tensor::zeros(1, 1, n);
        ParamTensor {
            name: name.into(),
            value,
            grad,
            is_weight,
            dims,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn values(&self) -> &[T] {
        self.value.data()
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        self.value.data_mut()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            is_weight: self.is_weight,
            dims: self.dims.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_fastest_layout() {
        let t = Tensor::<f32>::from_fn(2, 3, 4, |y, x, c| (y * 100 + x * 10 + c) as f32);
        assert_eq!(t.at(1, 2, 3), 123.0);
        assert_eq!(t.data()[t.index(1, 2, 3)], 123.0);
        assert_eq!(t.pixel(0, 1), &[10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::<f64>::from_fn(2, 2, 3, |y, x, c| (y + x + c) as f64);
        let b = Tensor::<f64>::from_fn(2, 2, 1, |y, x, _| -((y * 2 + x) as f64));
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 4);
        assert_eq!(cat.channel_slice(0, 3), a);
        assert_eq!(cat.channel_slice(3, 1), b);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Tensor::<f32>::from_vec(2, 2, 2, vec![0.0; 7]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
