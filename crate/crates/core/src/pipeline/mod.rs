//! Artifact-producing stages over a working directory:
//! `images/`, `folds/`, `checkpoints/`, `tables/`, `reports/`, `cams/`.
//! Every text artifact starts with `#` lines carrying the config hash and seed.

mod config;
mod stages;

pub use config::RunConfig;
pub use stages::{
    bench, eval_prediction_csv, read_learner_accuracies, run_all, stage_cam, stage_enhance, stage_eval, stage_predict, stage_split,
    stage_stack, stage_synth, stage_table, stage_train, BenchResult, EvalSummary,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::enhance::{EnhanceError, EnhancementVariant};
use crate::ensemble::EnsembleError;
use crate::metrics::MetricsError;
use crate::net::{CheckpointError, NetError, TrainError};
use crate::scorecam::ScoreCamError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    ScoreCam(#[from] ScoreCamError),
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Fail with the stage that produces `path` when it does not exist.
pub(crate) fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing { path: path.to_path_buf(), hint: format!("run `{producer}` first") })
    }
}

/// Paths inside a working directory.
#[derive(Clone, Debug)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn images(&self, v: EnhancementVariant) -> PathBuf {
        self.root.join("images").join(v.tag())
    }

    pub fn image(&self, v: EnhancementVariant, id: &str) -> PathBuf {
        self.images(v).join(format!("{id}.im3f"))
    }

    pub fn fold_plan(&self) -> PathBuf {
        self.root.join("folds").join("foldplan.txt")
    }

    pub fn checkpoint(&self, v: EnhancementVariant, fold: usize) -> PathBuf {
        self.root.join("checkpoints").join(v.tag()).join(format!("fold{fold}.sdmn"))
    }

    pub fn history(&self, v: EnhancementVariant, fold: usize) -> PathBuf {
        self.root.join("checkpoints").join(v.tag()).join(format!("fold{fold}_history.csv"))
    }

    pub fn predictions(&self, v: EnhancementVariant, fold: usize) -> PathBuf {
        self.root.join("tables").join(format!("pred_{}_fold{fold}.csv", v.tag()))
    }

    pub fn table(&self) -> PathBuf {
        self.root.join("tables").join("probability_table.csv")
    }

    pub fn stack(&self) -> PathBuf {
        self.root.join("checkpoints").join("stack.sdsk")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn cams(&self, v: EnhancementVariant) -> PathBuf {
        self.root.join("cams").join(v.tag())
    }
}
