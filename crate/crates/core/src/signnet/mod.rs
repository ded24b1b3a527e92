//! Three-branch tongue attribute network, its labels and its weighted loss.

mod labels;
mod loss;
mod model;
mod train;

pub use labels::{
    aux_labels, derive_color_labels, derive_fur_label, Attribute, AttributeVector, AuxLabels, FurRule,
    ATTRIBUTE_COUNT, ATTRIBUTE_NAMES, COLOR_NAMES,
};
pub use loss::{attr_weights, bce_logit, loss_on_tape, positive_counts, total_loss, LossWeights, Targets};
pub use model::{Outputs, Predictions, SignNet, SignNetConfig};
pub use train::{evaluate, stack_batch, train, Batch, EpochLog, Sample, TrainConfig, TrainReport};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::tensorad::TensorError;

#[derive(Debug, Error)]
pub enum SignNetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("attribute {} has no positive samples", ATTRIBUTE_NAMES[*.0])]
    ZeroCount(usize),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("bad input: {0}")]
    Input(String),
    #[error("parameters do not match the network layout")]
    Layout,
    #[error("loss is not finite")]
    NonFinite,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
