//! Data-parallel synchronous SGD: dense tensors and kernels, replicated
//! networks, a message-passing runtime with allreduce averaging, dataset
//! loaders, a training loop and an analytical scaling model.

pub mod comm;
pub mod data;
pub mod model;
pub mod perf;
pub mod tensor;
pub mod train;

pub use comm::{AllreduceAlgorithm, CommConfig, CommError, CommStats, Communicator, TransportKind};
pub use data::{Dataset, DatasetTag};
pub use model::{build_architecture, ArchitectureSpec, HyperParams, ParameterSet};
pub use tensor::{Scalar, Tensor};
pub use train::{train_distributed, train_sequential, TrainError, TrainOptions, TrainReport};
