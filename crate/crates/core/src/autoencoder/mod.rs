//! One-hidden-layer auto-encoder `r(x) = c + V·tanh(b + Wx)` trained as a
//! denoising or regularized-reconstruction auto-encoder, and the estimators
//! built on it: score `(r − x)/σ²`, Hessian `(∂r/∂x − I)/σ²` and the
//! Jacobian-symmetry diagnostic.

mod fastmath;
mod field;
pub mod lbfgs;
mod loss;
mod model;
mod train;

pub use field::{field_csv, hessian_estimate, probe_grid_2d, score_field, symmetry_defect, ScoreField, VectorField};
pub use loss::{
    dae_loss, dae_loss_grad, dae_loss_per_replica, rcae_loss, rcae_loss_grad, reconstruction_error, NoiseTable,
};
pub use model::{MlpAutoEncoder, CHECKPOINT_FORMAT_VERSION};
pub use train::{corruption_table, train, Init, NoiseKind, Objective, RestartSummary, TrainConfig, TrainResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutoencoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged in restart {restart} (last loss {last_loss})")]
    Diverged { restart: usize, last_loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
