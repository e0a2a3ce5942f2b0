//! Sample registry, fold planning, batching and a synthetic nodule generator.

mod batch;
mod manifest;
mod split;
mod synth;

pub use batch::{batch_iter, Batches};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, Record};
pub use split::{stratified_kfold, stratified_kfold_indices, Fold, FoldIndices, FoldPlan, SplitRatios};
pub use synth::{background_sigma, synth_background, synth_generate, synth_write, BlobParams, SynthBlob, SynthSample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: row {row}: {msg}")]
    Row { path: String, row: usize, msg: String },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] crate::enhance::EnhanceError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}
