use super::Tensor;
use crate::real::Real;

/// `y = x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu<T: Real>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

/// Backward pass. `input` is the forward input (the sign test is the same on
/// the output for any positive slope).
pub fn leaky_relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>, slope: T) -> Tensor<T> {
    assert!(input.same_shape(grad_out), "leaky_relu_backward shape mismatch");
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x < T::zero() {
            *gv *= slope;
        }
    }
    g
}
