//! Convolutional conditional neural process over irregular multivariate
//! vital-sign series: a set encoder onto a uniform grid, a UNet processor and
//! a Gaussian decoder, trained by likelihood. A second-stage head maps the
//! frozen processor features to a switch-readiness probability.

pub mod config;
pub mod encoder;
pub mod head;
pub mod model;
pub mod train;

use ivos_core::ReadinessError;
use ivos_tensor::TensorError;
use thiserror::Error;

pub use config::{GridSpec, ModelConfig};
pub use encoder::{encode, fit_standardization, FunctionalEncoding, Standardizer};
pub use head::{
    embed_tasks, head_search_space, train_cls_head, train_head_on_embeddings, ClassificationHead, HeadConfig,
    LabelledEmbedding, HEAD_PARAMS_FILE, HEAD_SIDECAR_FILE,
};
pub use model::{nll_sum_with, EpochLog, ForwardVars, TrainedModel, TrainingLog, PARAMS_FILE, SIDECAR_FILE};
pub use train::{grid_search, learning_rate_at, mean_task_nll, train};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Readiness(#[from] ReadinessError),
    #[error("context has no measurements before the prediction time")]
    EmptyContext,
    #[error("no targets to score")]
    NoTargets,
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("every configuration in the search space diverged")]
    AllDiverged,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
