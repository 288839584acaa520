//! The graph-transformer network, its losses, training loop, checkpoints and
//! random-search tuner.

mod checkpoint;
mod config;
mod net;
mod search;
mod train;

use thiserror::Error;

use crate::graph::GraphError;
use crate::numcore::NumError;

pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{Activation, ModelConfig, NormKind, OptimizerKind};
pub use net::{
    bce_loss, loss_value, mse_loss, task_loss, Bound, ForwardOut, GraphDims, GtModel, Mode,
    BCE_CLAMP, REGRESSION_SCALE,
};
pub use search::{random_search, SearchResult, SearchSpace, Trial};
pub use train::{train, train_model, train_traced, LossTrace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("every search trial diverged")]
    AllTrialsDiverged,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
