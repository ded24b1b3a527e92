//! Tongue attribute recognition at desk scale.
//!
//! The crate is organised as a pipeline:
//!
//! * [`imgcore`] raster types and the geometric/morphological primitives,
//! * [`orientation`] upright normalization of segmented tongue images,
//! * [`regions`] body/edge separation of an uprighted tongue,
//! * [`tensorad`] a small reverse-mode autodiff tensor engine,
//! * [`signnet`] the three-branch attribute network and its weighted loss,
//! * [`metrics`] accuracy, F1, Jaccard and ROC evaluation,
//! * [`data`] manifests, subject-disjoint folds and the synthetic tongue generator.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`,
//! which is what training and the gradient checks use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod imgcore;
pub mod metrics;
pub mod orientation;
pub mod pipeline;
pub mod regions;
pub mod scalar;
pub mod signnet;
pub mod tensorad;

pub use scalar::Scalar;

/// Dense tensor over `f64`.
pub type Tensor = tensorad::Tensor<f64>;
/// Dense tensor over `f32`.
pub type Tensor32 = tensorad::Tensor<f32>;
/// Gradient tape over `f64`.
pub type Tape = tensorad::Tape<f64>;
/// Parameter registry over `f64`.
pub type ParamStore = tensorad::ParamStore<f64>;
/// The attribute network over `f64`.
pub type SignNet = signnet::SignNet<f64>;
/// Per-sample network outputs over `f64`.
pub type Predictions = signnet::Predictions<f64>;
/// Loss weights over `f64`.
pub type LossWeights = signnet::LossWeights<f64>;
/// ROC curve over `f64` scores.
pub type RocCurve = metrics::RocCurve<f64>;
