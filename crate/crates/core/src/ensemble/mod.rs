//! Probability tables, the eight classical learners, top-3 selection and the
//! meta random-forest stack.

mod boost;
mod features;
mod forest;
mod learner;
mod linear;
mod mlp;
mod stack;
mod table;
mod tree;

pub use boost::{AdaBoost, GbParams, GradientBoosting};
pub use features::Features;
pub use forest::{ForestParams, MaxFeatures, RandomForest};
pub use learner::{fit_learner, FittedLearner, LearnerKind, LearnerParams};
pub use linear::{Lda, LinearSvm, LogisticRegression};
pub use mlp::MlpClassifier;
pub use stack::{
    cross_validated_accuracy, decode_stack, encode_stack, meta_forest_params, predict_stack, select_top3, train_meta_rf, OofAudit, StackModel,
    META_FOLDS, STACK_MAGIC, STACK_VERSION,
};
pub use table::{ProbabilityTable, TableRow, TABLE_HEADER};
pub use tree::{DecisionTree, TreeNode, TreeParams};

use thiserror::Error;

use crate::container::ContainerError;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("table error: {0}")]
    Table(String),
    #[error("stack file: {0}")]
    Container(#[from] ContainerError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Training-set checks shared by every learner.
pub(crate) fn check_training(x: &Features, y: &[u8]) -> Result<()> {
    if x.n() != y.len() {
        return Err(EnsembleError::Dimension(format!("{} rows but {} labels", x.n(), y.len())));
    }
    x.check_finite()?;
    if let Some(l) = y.iter().find(|&&l| l > 1) {
        return Err(EnsembleError::Parameter(format!("label {l} is not binary")));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(EnsembleError::SingleClass);
    }
    Ok(())
}
