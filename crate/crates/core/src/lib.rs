//! Depth estimation from a monocular image sequence with known camera motion.
//!
//! A recurrent pyramid network matches features of consecutive frames
//! through a cost volume built on reprojection, and refines its depth
//! estimate from one frame to the next. Every layer has a hand-written
//! backward pass (see [`gradcheck`]). [`data`] renders synthetic scenes with
//! exact ground truth, and [`train`] and [`eval`] run training and scoring
//! at desk scale.

pub mod camera;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod network;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{ParamTensor, Tensor};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/geometry.md")]
mod book_geometry {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/layers.md")]
mod book_layers {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/network.md")]
mod book_network {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
