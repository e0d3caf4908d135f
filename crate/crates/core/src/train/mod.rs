//! Data-parallel training: the root scatters shards, every rank trains a
//! replica locally and replicas are averaged through allreduce.

mod distributed;
mod sequential;

pub use distributed::train_distributed;
pub use sequential::train_sequential;

use thiserror::Error;

use crate::comm::CommError;
use crate::data::{DataError, Dataset};
use crate::model::{forward, predict, ArchitectureSpec, ModelError, ParameterSet};
use crate::tensor::{Scalar, Tensor, TensorError};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status when a collective or transport failed.
pub const EXIT_COLLECTIVE: i32 = 2;
/// Exit status when data could not be loaded or did not fit the model.
pub const EXIT_DATA: i32 = 3;
/// Exit status for invalid configuration.
pub const EXIT_CONFIG: i32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dataset does not fit the architecture: {0}")]
    Incompatible(String),
    #[error("replica parameters diverged at sync {sync}")]
    ReplicaDivergence { sync: usize },
}

impl TrainError {
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Comm(_) | TrainError::ReplicaDivergence { .. } => EXIT_COLLECTIVE,
            TrainError::Data(_) | TrainError::Incompatible(_) => EXIT_DATA,
            TrainError::Model(_) | TrainError::Tensor(_) => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot split {m} samples across {p} ranks")]
pub struct PartitionError {
    pub m: usize,
    pub p: usize,
}

/// Contiguous `(offset, len)` ranges covering `0..m`; the first `m % p`
/// ranges get one extra sample.
pub fn partition_indices(m: usize, p: usize) -> Result<Vec<(usize, usize)>, PartitionError> {
    if p == 0 || m < p {
        return Err(PartitionError { m, p });
    }
    let (base, extra) = (m / p, m % p);
    let mut offset = 0;
    Ok((0..p)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let range = (offset, len);
            offset += len;
            range
        })
        .collect())
}

/// One rank's slice of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard<T = f64> {
    pub samples: Tensor<T>,
    pub labels: Tensor<T>,
    pub global_offset: usize,
    /// Sample count of the whole dataset.
    pub total: usize,
    pub class_count: usize,
}

impl<T: Scalar> Shard<T> {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fraction of test rows whose argmax prediction equals the label.
pub fn evaluate<T: Scalar>(
    arch: &ArchitectureSpec,
    params: &ParameterSet<T>,
    testset: &Dataset<T>,
) -> Result<f64, ModelError> {
    const CHUNK: usize = 1024;
    let m = testset.len();
    let mut correct = 0usize;
    let mut start = 0;
    while start < m {
        let n = CHUNK.min(m - start);
        let trace = forward(arch, params, &testset.samples.slice_rows(start, n)?)?;
        for (i, k) in predict(trace.probs()).into_iter().enumerate() {
            if testset.class_of(start + i) == k {
                correct += 1;
            }
        }
        start += n;
    }
    Ok(correct as f64 / m as f64)
}

/// Statistics for one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean cross-entropy over every sample seen this epoch, across ranks.
    pub loss: f64,
    pub secs: f64,
    /// Payload bytes sent by all ranks together inside sync allreduces.
    pub sync_bytes: u64,
    pub syncs: u64,
}

/// Outcome of a training run, identical on every rank apart from `rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub rank: usize,
    pub procs: usize,
    pub epochs: Vec<EpochStats>,
    pub test_accuracy: Option<f64>,
    /// The learning rate used as given; it is not rescaled with `procs`.
    pub learning_rate: f64,
    pub param_count: usize,
    pub element_width: usize,
    pub batches_per_epoch: usize,
    /// This rank's parameter hash after every sync, when verification is on.
    pub sync_hashes: Vec<u64>,
    pub wall_secs: f64,
}

impl TrainReport {
    pub fn total_syncs(&self) -> u64 {
        self.epochs.iter().map(|e| e.syncs).sum()
    }

    pub fn total_sync_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.sync_bytes).sum()
    }

    /// Mean payload bytes one rank sends per sync.
    pub fn bytes_per_sync_per_rank(&self) -> f64 {
        let syncs = self.total_syncs();
        if syncs == 0 {
            return 0.0;
        }
        self.total_sync_bytes() as f64 / (syncs as f64 * self.procs as f64)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Compare parameter hashes across ranks after every sync.
    pub verify_replicas: bool,
    /// Print `epoch=<i> rank=<r> loss=<f> secs=<f>` to stderr per epoch.
    pub progress: bool,
}

/// Batches per epoch on every rank: enough to cover the largest shard.
pub fn batches_per_epoch(m: usize, p: usize, batch_size: usize) -> usize {
    m.div_ceil(p).div_ceil(batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::model::{build_architecture, ArchitectureSpec, Layer};
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_indices(10, 2).unwrap(), vec![(0, 5), (5, 5)]);
        assert_eq!(
            partition_indices(10, 3).unwrap(),
            vec![(0, 4), (4, 3), (7, 3)]
        );
        assert_eq!(partition_indices(17, 1).unwrap(), vec![(0, 17)]);
        assert!(partition_indices(2, 3).is_err());
        assert!(partition_indices(2, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_covers_and_balances(m in 1usize..5000, p in 1usize..64) {
            prop_assume!(m >= p);
            let parts = partition_indices(m, p).unwrap();
            prop_assert_eq!(parts.len(), p);
            let mut next = 0;
            for &(o, l) in &parts {
                prop_assert_eq!(o, next);
                next += l;
            }
            prop_assert_eq!(next, m);
            let lo = parts.iter().map(|x| x.1).min().unwrap();
            let hi = parts.iter().map(|x| x.1).max().unwrap();
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn uniform_model_predicts_class_zero() {
        let arch = build_architecture("mnist-dnn").unwrap();
        let params = ParameterSet::<f64>::zeros(&arch);
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let ds =
            Dataset::from_class_indices("t", Tensor::zeros(&[1000, 784]), &labels, 10).unwrap();
        assert_eq!(evaluate(&arch, &params, &ds).unwrap(), 0.1);
    }

    #[test]
    fn forced_predictions_score_one() {
        // identity logits on one-hot inputs
        let arch = ArchitectureSpec::new("id", vec![3], vec![Layer::SoftmaxOutput { classes: 3 }])
            .unwrap();
        let mut params = ParameterSet::<f64>::zeros(&arch);
        let mut flat = vec![0.0; 12];
        for k in 0..3 {
            flat[k * 3 + k] = 1.0;
        }
        params.assign_flat(&flat).unwrap();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let samples = crate::data::one_hot(&labels, 3).unwrap();
        let ds = Dataset::from_class_indices("t", samples, &labels, 3).unwrap();
        assert_eq!(evaluate(&arch, &params, &ds).unwrap(), 1.0);
    }

    #[test]
    fn random_two_class_model_is_near_chance() {
        let arch = ArchitectureSpec::new(
            "r",
            vec![2],
            vec![
                Layer::Dense {
                    units: 4,
                    activation: crate::model::Activation::Sigmoid,
                },
                Layer::SoftmaxOutput { classes: 2 },
            ],
        )
        .unwrap();
        let ds = synthetic_blobs::<f64>(1000, 2, 2, 5).unwrap();
        // labels shuffled against the clusters so no fixed model can do better than chance
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
        let labels: Vec<usize> = (0..1000)
            .map(|_| rand::Rng::gen_range(&mut rng, 0..2))
            .collect();
        let ds = Dataset::from_class_indices("t", ds.samples, &labels, 2).unwrap();
        let params = crate::model::init_params(&arch, 3);
        let acc = evaluate(&arch, &params, &ds).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn batch_count_covers_largest_shard() {
        assert_eq!(batches_per_epoch(1000, 1, 64), 16);
        assert_eq!(batches_per_epoch(1000, 3, 64), 6);
        assert_eq!(batches_per_epoch(10, 2, 5), 1);
    }
}
