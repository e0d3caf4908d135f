//! Network architectures, replicated parameters, forward/backward passes
//! and the local SGD step.

mod arch;
mod gradcheck;
mod network;
mod params;

pub use arch::{
    build_architecture, Activation, ArchitectureSpec, Layer, ParamShape, ARCHITECTURE_TAGS,
};
pub use gradcheck::network_gradient_error;
pub use network::{backward, batch_loss, forward, predict, Trace};
pub use params::{
    init_params, read_checkpoint, sgd_step, write_checkpoint, LayerParams, ParameterSet,
};

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("parameter vector has {got} values, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// When replicas synchronize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SyncGranularity {
    #[default]
    PerBatch,
    PerEpoch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// What the sync allreduce averages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Weights and biases after each local step.
    #[default]
    Parameters,
    /// Gradients before a shared step; only meaningful per batch.
    Gradients,
}

fn parse_err(what: &str, s: &str) -> ModelError {
    ModelError::InvalidHyperParams(format!("unknown {what} {s:?}"))
}

impl FromStr for SyncGranularity {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_batch" => Ok(Self::PerBatch),
            "per_epoch" => Ok(Self::PerEpoch),
            _ => Err(parse_err("sync granularity", s)),
        }
    }
}

impl fmt::Display for SyncGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerBatch => "per_batch",
            Self::PerEpoch => "per_epoch",
        })
    }
}

impl FromStr for Precision {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(parse_err("precision", s)),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

impl FromStr for Averaging {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parameters" => Ok(Self::Parameters),
            "gradients" => Ok(Self::Gradients),
            _ => Err(parse_err("averaging mode", s)),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Parameters => "parameters",
            Self::Gradients => "gradients",
        })
    }
}

/// Training knobs. The defaults (lr 0.01, batch 64, 5 epochs) are this
/// crate's choice and are echoed in every benchmark output.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sync: SyncGranularity,
    pub precision: Precision,
    pub averaging: Averaging,
    /// Stop after the first epoch that ends past this much wall time.
    pub time_budget: Option<Duration>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 5,
            seed: 42,
            sync: SyncGranularity::PerBatch,
            precision: Precision::F64,
            averaging: Averaging::Parameters,
            time_budget: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidHyperParams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.averaging == Averaging::Gradients && self.sync != SyncGranularity::PerBatch {
            return bad("gradient averaging requires per_batch sync");
        }
        Ok(())
    }
}
