//! Objective, learning-rate schedule, optimizer and the training loop.

mod loss;
mod optim;
mod schedule;
mod trainer;

pub use loss::{cross_entropy, data_loss_on_tape, loss, loss_and_grads, object_row, regularization, LossConfig, LossValue};
pub use optim::{AdamW, L1Mode};
pub use schedule::{one_cycle_lr, one_cycle_lr_with_warmup, DEFAULT_WARMUP_FRAC};
pub use trainer::{build_samples, train, MetricsRow, Sample, TrainConfig, Trainer};

use crate::graph::NodeId;
use crate::network::{CheckpointError, NetworkError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("ground-truth object {object_id} is not a node of the scene")]
    IndexOutOfRange { object_id: NodeId },
    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics log: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
