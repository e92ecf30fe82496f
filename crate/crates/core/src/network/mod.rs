//! The recurrent depth pyramid.
//!
//! A shared encoder turns each frame into `M` feature maps, level `l` at
//! `1/2^l` of the input resolution. Levels are then decoded coarse to fine.
//! At each level a parameter-free preprocessing unit warps the previous
//! frame's features and depth into the current view using the upsampled
//! depth of the level above, correlates the warped features with the current
//! ones, and stacks everything into the input of a seven-layer convolutional
//! depth estimator. The estimate feeds the next finer level and, through the
//! [`SequenceState`], the same level at the next time step.

mod backward;
pub(crate) mod config;
mod forward;
mod triangulate;

pub use backward::{Gradients, SequenceLoss};
pub use config::{NetworkConfig, AUX_CHANNELS, ENCODER_CHANNELS, ESTIMATOR_CHANNELS};
pub use forward::{CoordDepths, Frame, LevelState, SequenceState, SequenceTrace, StepOutput};
pub use triangulate::{patch_descriptors, triangulate_analytic, TriangulationParams};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{he_init, NamedTensor, ParamTensor};

/// A 3x3 convolution referencing its kernel and bias in [`Network::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    pub config: NetworkConfig,
    pub params: Vec<ParamTensor<T>>,
    /// Per level (0 = finest): stride-2 conv, then stride-1 conv.
    encoder: Vec<[Conv; 2]>,
    /// Per level: the seven estimator convolutions.
    estimators: Vec<Vec<Conv>>,
}

struct Builder<T> {
    params: Vec<ParamTensor<T>>,
    seed: u64,
}

impl<T: Real> Builder<T> {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, stride: usize) -> Conv {
        let dims = vec![3, 3, c_in, c_out];
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.params.len() as u64);
        let w = he_init::<T>(&dims, seed).into_vec();
        self.params.push(ParamTensor::new(format!("{name}.weight"), dims, w, true));
        self.params.push(ParamTensor::new(
            format!("{name}.bias"),
            vec![c_out],
            vec![T::zero(); c_out],
            false,
        ));
        Conv {
            weight: self.params.len() - 2,
            bias: self.params.len() - 1,
            stride,
        }
    }
}

impl<T: Real> Network<T> {
    /// He-initialised weights and zero biases, deterministic in `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::<T> {
            params: Vec::new(),
            seed,
        };
        let mut encoder = Vec::with_capacity(config.num_levels);
        let mut c_prev = 3;
        for level in 0..config.num_levels {
            let c = config.encoder_channels[level];
            let down = b.conv(&format!("encoder.{}.down", level + 1), c_prev, c, 2);
            let refine = b.conv(&format!("encoder.{}.refine", level + 1), c, c, 1);
            encoder.push([down, refine]);
            c_prev = c;
        }
        let mut estimators = Vec::with_capacity(config.num_levels);
        for level in 0..config.num_levels {
            let mut c_in = config.estimator_input_channels(level);
            let mut convs = Vec::with_capacity(config.estimator_channels.len());
            for (k, &c_out) in config.estimator_channels.iter().enumerate() {
                convs.push(b.conv(&format!("estimator.{}.{}", level + 1, k), c_in, c_out, 1));
                c_in = c_out;
            }
            estimators.push(convs);
        }
        Ok(Network {
            config,
            params: b.params,
            encoder,
            estimators,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            encoder: self.encoder.clone(),
            estimators: self.estimators.clone(),
        }
    }

    /// Parameters as checkpoint tensors (32-bit), in construction order.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                dims: p.dims.iter().map(|&d| d as u32).collect(),
                data: p.values().iter().map(|v| v.f64() as f32).collect(),
            })
            .collect()
    }

    /// Rebuild a network for `config` and copy values from `tensors`. Every
    /// parameter must be present with matching dims.
    pub fn from_named_tensors(config: NetworkConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let mut net = Network::new(config, 0)?;
        for p in &mut net.params {
            let t = tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {}", p.name)))?;
            let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
            if dims != p.dims {
                return Err(Error::format(
                    "checkpoint",
                    format!("{} has dims {:?}, expected {:?}", p.name, dims, p.dims),
                ));
            }
            for (dst, &src) in p.values_mut().iter_mut().zip(&t.data) {
                *dst = T::lit(src as f64);
            }
        }
        Ok(net)
    }
}
