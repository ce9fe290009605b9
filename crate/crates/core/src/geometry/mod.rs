//! Garment warping: TPS math, grids and sampling, the warp network and its loss.

#[cfg(feature = "nn")]
mod loss;
pub mod tps;
#[cfg(feature = "nn")]
mod warp;
#[cfg(feature = "nn")]
mod warpnet;

#[cfg(feature = "nn")]
pub use loss::{constraint_tensor, warp_loss, WarpLoss, LAMBDA_CONST};
pub use tps::{sample_bilinear, second_order_constraint, tps_grid, SamplingGrid, TpsBasis, TpsParams};
#[cfg(feature = "nn")]
pub use warp::{grid_sample, GridTensor, TpsWarper};
#[cfg(feature = "nn")]
pub use warpnet::{correlation, WarpNet, WarpNetConfig};
