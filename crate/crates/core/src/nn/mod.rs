//! Small neural-network toolkit: tensors, convolution / pooling / dense /
//! LSTM kernels with hand-written backward passes, a layer pipeline, Adam,
//! and a finite-difference gradient checker.
//!
//! Compute runs in f64. Trainable parameters are kept f32-representable
//! (rounded after initialization and every optimizer step) so checkpoints
//! can store them as f32 without changing predictions.

mod gradcheck;
mod network;
pub mod ops;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use network::{Cache, Grads, Layer, Network, Param, ParamStore};
pub use optim::{seeded_init, seeded_rng, Adam, AdamConfig, Rng};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NnError::ShapeMismatch { op, detail: detail.into() }
    }
}
