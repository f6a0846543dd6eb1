//! Conditional denoising diffusion over 5D points.

mod net;
mod sampler;
mod schedule;

pub use net::{
    points_tensor, step_features, tensor_points, ConcatSquash, NetConfig, NoiseNet, STEP_FEATURES,
};
pub use sampler::{
    draw_noise, generate, generate_batch, reverse_process, trace_csv_row, training_loss,
    training_loss_with, LossWeights, NoiseDraw, SamplerOptions, TraceFn,
};
pub use schedule::NoiseSchedule;

use thiserror::Error;

use crate::nn::NnError;

/// A point `(u, v, w, ep_re, ep_im)`.
pub type Point5 = [f64; 5];

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("diffusion step {step} outside 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("reverse trajectory became non-finite at step {step} (point {point})")]
    NonFinite { step: usize, point: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}
