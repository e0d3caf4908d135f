//! Strong-scaling harness: runs distributed training across process counts
//! and reports relative speedups.

pub mod calibrate;
pub mod sweep;
pub mod table;

pub use sweep::{run_sweep, run_training, PointResult};
pub use table::{emit_table, parse_csv, BenchRecord, TableFormat, CSV_HEADER};

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parasgd_core::data::{DataError, DatasetTag};
use parasgd_core::model::ModelError;
use parasgd_core::train::{EXIT_COLLECTIVE, EXIT_CONFIG, EXIT_DATA};
use parasgd_core::{AllreduceAlgorithm, HyperParams, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} exists; pass --force to overwrite")]
    OutputExists(PathBuf),
    #[error("failed to launch ranks: {0}")]
    Launch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Train(e) => e.exit_code(),
            BenchError::Data(_) => EXIT_DATA,
            BenchError::Launch(_) => EXIT_COLLECTIVE,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Transport {
    #[default]
    InProcess,
    Tcp,
}

impl FromStr for Transport {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inprocess" => Ok(Self::InProcess),
            "tcp" => Ok(Self::Tcp),
            _ => Err(BenchError::Config(format!("unknown transport {s:?}"))),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::InProcess => "inprocess",
            Self::Tcp => "tcp",
        })
    }
}

/// One sweep: every process count runs with the same data, seed and budget.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub dataset: DatasetTag,
    pub arch: String,
    pub transport: Transport,
    /// Ascending, without duplicates.
    pub procs: Vec<usize>,
    pub baseline: usize,
    pub hyper: HyperParams,
    pub algorithm: AllreduceAlgorithm,
    /// Forces the deterministic allreduce and checks replica hashes after
    /// every sync.
    pub deterministic: bool,
    pub data_dir: PathBuf,
    /// Keep only the first this many training samples.
    pub subset: Option<usize>,
    /// Host list for tcp runs, one host per line; rank `r` runs on line
    /// `r mod len`.
    pub hosts: Option<PathBuf>,
    /// Binary providing the `worker` subcommand for tcp runs.
    pub worker_exe: Option<PathBuf>,
    pub progress: bool,
}

impl BenchConfig {
    pub fn new(dataset: DatasetTag, arch: impl Into<String>) -> Self {
        Self {
            dataset,
            arch: arch.into(),
            transport: Transport::InProcess,
            procs: vec![1],
            baseline: 1,
            hyper: HyperParams::default(),
            algorithm: AllreduceAlgorithm::Deterministic,
            deterministic: false,
            data_dir: PathBuf::from("data"),
            subset: None,
            hosts: None,
            worker_exe: None,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.procs.is_empty() {
            return bad("no process counts given".into());
        }
        if self.procs.contains(&0) {
            return bad("process counts must be positive".into());
        }
        if self.procs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "process counts {:?} are not strictly ascending",
                self.procs
            ));
        }
        if !self.procs.contains(&self.baseline) {
            return bad(format!(
                "baseline {} is not among {:?}",
                self.baseline, self.procs
            ));
        }
        if self.subset == Some(0) {
            return bad("subset must be positive".into());
        }
        self.hyper.validate()?;
        Ok(())
    }

    pub fn effective_algorithm(&self) -> AllreduceAlgorithm {
        if self.deterministic {
            AllreduceAlgorithm::Deterministic
        } else {
            self.algorithm
        }
    }
}

/// Writes `text` to `path`, refusing to replace an existing file unless
/// `force` is set.
pub fn write_output(path: &Path, text: &str, force: bool) -> Result<(), BenchError> {
    if path.exists() && !force {
        return Err(BenchError::OutputExists(path.to_path_buf()));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Nominal training-set size of a dataset, for model predictions made
/// without loading the data.
pub fn nominal_train_samples(tag: &DatasetTag) -> usize {
    match tag {
        DatasetTag::Mnist => 60_000,
        DatasetTag::Cifar10 => 50_000,
        DatasetTag::Adult => 32_561,
        DatasetTag::Acoustic => 78_823,
        DatasetTag::Higgs => 10_900_000,
        DatasetTag::Synthetic { samples, .. } => *samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BenchConfig {
        BenchConfig::new("synthetic".parse().unwrap(), "adult-dnn")
    }

    #[test]
    fn baseline_must_be_swept() {
        let mut c = cfg();
        c.procs = vec![1, 2, 4];
        c.baseline = 4;
        c.validate().unwrap();
        c.baseline = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_must_ascend() {
        let mut c = cfg();
        c.procs = vec![2, 1];
        c.baseline = 1;
        assert!(c.validate().is_err());
        c.procs = vec![1, 1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_output(&p, "a", false).unwrap();
        assert!(matches!(
            write_output(&p, "b", false),
            Err(BenchError::OutputExists(_))
        ));
        write_output(&p, "b", true).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b");
    }

    #[test]
    fn transport_names() {
        assert_eq!("tcp".parse::<Transport>().unwrap(), Transport::Tcp);
        assert_eq!(Transport::InProcess.to_string(), "inprocess");
        assert!("mpi".parse::<Transport>().is_err());
    }
}
