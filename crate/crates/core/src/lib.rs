//! Sparse 2D-Gaussian parameterization of image datasets.
//!
//! Every synthetic image is a set of `M` Gaussians with nine parameters
//! each (position, Cholesky factor, color, opacity), rendered by additive
//! splatting. The crate provides a brute-force and a tile-scheduled batched
//! renderer, an analytic backward pass with finite-difference checks,
//! bf16 straight-through quantization, image fitting and a
//! distribution-matching distillation loop, a bit-exact container format,
//! and pruning/evaluation/benchmark tooling.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod layout;
pub mod optim;
pub mod raster;

pub use error::{GsddError, Result};
pub use grad::{render_backward, GradBuffer};
pub use layout::{
    budget_points, clip_positions, normalized_to_pixel, param_offset, BudgetSpec, DistilledSet,
    Gaussian2D, RenderConfig, TileLayout, PARAMS_PER_GAUSSIAN,
};
pub use raster::{render_batched, render_reference, ImageBuffer};
