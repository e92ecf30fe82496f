//! The two parameter-free layers of each pyramid level: spatial
//! reprojection (warping) of the previous time step and the correlation
//! cost volume.

mod cost_volume;
mod warp;

pub use cost_volume::{cost, cost_volume, cost_volume_backward, offset_channel, channel_offset};
pub use warp::{warp, warp_backward, WarpGrads, WarpPlan, WarpResult};
