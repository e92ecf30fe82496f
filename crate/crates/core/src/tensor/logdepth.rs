//! Natural-log depth codec with a clamp to a configurable metric range.

use super::Tensor;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange { min: 0.1, max: 200.0 }
    }
}

impl DepthRange {
    pub fn clamp(&self, d: f64) -> f64 {
        d.clamp(self.min, self.max)
    }

    pub fn log_min(&self) -> f64 {
        self.min.ln()
    }

    pub fn log_max(&self) -> f64 {
        self.max.ln()
    }

    /// Clamp a log-depth value to the range.
    pub fn clamp_log<T: Real>(&self, x: T) -> T {
        let lo = T::lit(self.log_min());
        let hi = T::lit(self.log_max());
        if x < lo {
            lo
        } else if x > hi {
            hi
        } else {
            x
        }
    }

    /// True when `d` sits strictly inside the range, i.e. the clamp passes
    /// gradients through.
    pub fn passes<T: Real>(&self, d: T) -> bool {
        let d = d.f64();
        d > self.min && d < self.max
    }
}

/// `ln(clamp(d))`. Non-positive and NaN inputs map to `ln(min)`.
pub fn log_depth_encode<T: Real>(depth: &Tensor<T>, range: DepthRange) -> Tensor<T> {
    let lo = T::lit(range.min);
    let hi = T::lit(range.max);
    depth.map(|d| {
        let c = if d > lo {
            if d < hi {
                d
            } else {
                hi
            }
        } else {
            lo
        };
        c.ln()
    })
}

/// `exp(clamp_log(x))`; always strictly positive.
pub fn log_depth_decode<T: Real>(log_depth: &Tensor<T>, range: DepthRange) -> Tensor<T> {
    log_depth.map(|x| {
        let x = if x.is_nan() { T::lit(range.log_min()) } else { x };
        range.clamp_log(x).exp()
    })
}
