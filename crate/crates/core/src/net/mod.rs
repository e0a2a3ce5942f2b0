//! Self-ONN layers, the dense-mobile network built from them, training,
//! inference and checkpoints.

mod checkpoint;
mod config;
mod layers;
mod model;
mod params;
mod train;

pub use checkpoint::{checkpoint_load, checkpoint_save, decode_checkpoint, encode_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, StageSpec, NUM_CLASSES};
pub use layers::{apply_bn_updates, self_mlp_forward, selfonn_conv_forward, BatchNorm, BnUpdate, Bottleneck, LayerCtx, SelfMlp, SelfOnnConv, BN_EPS, BN_MOMENTUM};
pub use model::{predict_proba, probability_from_logits, ForwardMode, ForwardOutput, Model};
pub use params::ParamStore;
pub use train::{evaluate, train_model, EpochRecord, PlateauAction, PlateauTracker, TrainConfig, TrainError, TrainOutcome};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;
