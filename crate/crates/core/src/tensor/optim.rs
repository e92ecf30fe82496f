//! Adam with the usual defaults (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).

use super::ParamTensor;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    /// Apply one update using the gradients stored in `params`.
    pub fn step<T: Real>(&self, params: &mut [ParamTensor<T>], lr: f64, state: &mut AdamState) {
        if state.m.len() != params.len() {
            state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            state.v = state.m.clone();
            state.step = 0;
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
            let ParamTensor { value, grad, .. } = p;
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.f64();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *w = T::lit(w.f64() - update);
            }
        }
    }
}
