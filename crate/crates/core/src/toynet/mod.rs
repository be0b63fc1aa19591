//! Small convolutional detector with hand-written backpropagation.

mod checkpoint;
mod conv;
mod net;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{conv_backward, conv_forward, ConvSpec};
pub use net::{sigmoid, softplus, HeadGrads, NetOutput, Tape, Topology, ToyNet, OUTPUT_STRIDE};
pub use tensor::Tensor;
pub use train::{
    batch_loss, batch_loss_and_grad, head_loss, train, train_with_progress, Adam, LossBreakdown,
    TrainConfig, TrainHistory, TrainingExample,
};

use crate::losses::LossError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("checkpoint error: {0}")]
    Version(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
