//! Optimizer, losses, image fitting and distribution-matching distillation.

mod adam;
mod distill;
mod featnet;
mod fit;
mod loss;

pub use adam::AdamState;
pub use distill::{distill_dm, DistillResult};
pub use featnet::{dm_loss_grad, FeatureNet, FeatureNetSpec};
pub use fit::{
    fit_dataset, fit_images, init_image, write_trace_csv, FitResult, TraceRow, TrainConfig,
};
pub use loss::{boundary_loss, mse_loss_grad, psnr};
