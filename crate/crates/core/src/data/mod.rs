//! Dataset manifests, subject-disjoint fold plans and the synthetic tongue
//! generator.

mod folds;
mod manifest;
mod synth;

pub use folds::{fold_attribute_counts, split_folds, FoldCounts, FoldPlan, Holdout};
pub use manifest::{load_manifest, read_manifest, write_manifest, Gender, SampleRecord, MANIFEST_COLUMNS};
pub use synth::{synth_generate, synth_sample, SynthConfig, SynthSample, TongueShape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Csv(String),
    #[error("manifest is missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: attribute value {value:?} is not 0 or 1")]
    BadBit {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column}: invalid value {value:?}")]
    BadField {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: image path {path:?} already listed")]
    DuplicatePath { row: usize, path: String },
    #[error("{subjects} subjects cannot fill {needed}")]
    TooFewSubjects { subjects: usize, needed: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}
