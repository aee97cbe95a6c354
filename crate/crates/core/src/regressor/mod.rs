//! Convolutional parameter regression: tensors, reverse-mode differentiation,
//! the network, its loss, the optimizer and the training loop.

pub mod autodiff;
pub mod loss;
pub mod network;
pub mod optim;
pub mod state;
pub mod tensor;
pub mod train;

pub use loss::{LossMetric, LossWeights};
pub use network::{normalize_input, ConvSpec, Network, NetworkSpec};
pub use optim::AdaDelta;
pub use state::RegressorState;
pub use tensor::{Scalar, Tensor};
pub use train::{train, LossTrace, TrainConfig};
