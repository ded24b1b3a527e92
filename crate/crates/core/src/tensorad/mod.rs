//! Dense `Scalar` tensors with a reverse-mode gradient tape.
//!
//! A [`Tape`] records one forward pass. Leaves are either constants (inputs,
//! labels) or variables (parameters); [`Tape::backward`] walks the record in
//! reverse and returns [`Gradients`] for every node that depends on a
//! variable. Parameters live in a [`ParamStore`] between passes and are bound
//! onto a fresh tape for each step.

mod gradcheck;
pub mod layers;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, rel_error, GradCheckReport};
pub use layers::{ffn, linear, scaled_dot_attention};
pub use optim::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use params::{Bound, Checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
