use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    batches_per_epoch, evaluate, EpochStats, Shard, TrainError, TrainOptions, TrainReport,
};
use crate::comm::Communicator;
use crate::data::Dataset;
use crate::model::{
    backward, batch_loss, forward, init_params, ArchitectureSpec, Averaging, HyperParams,
    ParameterSet, SyncGranularity,
};
use crate::tensor::Scalar;

pub(super) fn check_fits<T: Scalar>(
    arch: &ArchitectureSpec,
    ds: &Dataset<T>,
) -> Result<(), TrainError> {
    if ds.feature_count() != arch.input_len() {
        return Err(TrainError::Incompatible(format!(
            "{} has {} features per sample, {} expects {}",
            ds.name,
            ds.feature_count(),
            arch.tag(),
            arch.input_len()
        )));
    }
    if ds.class_count != arch.classes() {
        return Err(TrainError::Incompatible(format!(
            "{} has {} classes, {} expects {}",
            ds.name,
            ds.class_count,
            arch.tag(),
            arch.classes()
        )));
    }
    Ok(())
}

/// Runs synchronous data-parallel SGD on every rank of `comm`.
///
/// Rank 0 supplies the training and test sets; other ranks pass `None`.
/// All ranks start from `init_params(arch, hyper.seed)`, train on their own
/// shard and average at every sync point. On any error this rank aborts the
/// whole group before returning.
pub fn train_distributed<T: Scalar>(
    comm: &Communicator,
    arch: &ArchitectureSpec,
    hyper: &HyperParams,
    train: Option<&Dataset<T>>,
    test: Option<&Dataset<T>>,
    opts: &TrainOptions,
) -> Result<(TrainReport, ParameterSet<T>), TrainError> {
    let result = run(comm, arch, hyper, train, test, opts);
    if result.is_err() {
        comm.abort();
    }
    result
}

struct Replica<'a, T> {
    comm: &'a Communicator,
    params: ParameterSet<T>,
    verify: bool,
    sync_bytes: u64,
    syncs: u64,
    hashes: Vec<u64>,
}

impl<T: Scalar> Replica<'_, T> {
    fn average_params(&mut self) -> Result<(), TrainError> {
        let before = self.comm.stats().bytes_sent;
        let avg = self.comm.allreduce_average(&self.params.flatten())?;
        self.params.assign_flat(&avg)?;
        self.finish_sync(before)
    }

    fn average_grads(&mut self, grads: &ParameterSet<T>, lr: T) -> Result<(), TrainError> {
        let before = self.comm.stats().bytes_sent;
        let avg = self.comm.allreduce_average(&grads.flatten())?;
        let mut mean = grads.clone();
        mean.assign_flat(&avg)?;
        self.params.sgd_update(&mean, lr)?;
        self.finish_sync(before)
    }

    fn finish_sync(&mut self, bytes_before: u64) -> Result<(), TrainError> {
        self.sync_bytes += self.comm.stats().bytes_sent - bytes_before;
        self.syncs += 1;
        if self.verify {
            let h = self.params.bit_hash();
            let gathered = self.comm.gather(0, &h.to_le_bytes())?;
            let agree = gathered.map(|all| all.iter().all(|b| b[..] == h.to_le_bytes()));
            let verdict = self
                .comm
                .broadcast(0, vec![u8::from(agree.unwrap_or(true))])?;
            if verdict.first() != Some(&1) {
                return Err(TrainError::ReplicaDivergence {
                    sync: self.hashes.len(),
                });
            }
            self.hashes.push(h);
        }
        Ok(())
    }
}

fn run<T: Scalar>(
    comm: &Communicator,
    arch: &ArchitectureSpec,
    hyper: &HyperParams,
    train: Option<&Dataset<T>>,
    test: Option<&Dataset<T>>,
    opts: &TrainOptions,
) -> Result<(TrainReport, ParameterSet<T>), TrainError> {
    hyper.validate()?;
    let started = Instant::now();
    if comm.is_root() {
        for ds in train.iter().chain(test.iter()) {
            check_fits(arch, ds)?;
        }
    }
    let shard: Shard<T> = comm.scatter_shards(0, train)?;
    let p = comm.size();
    let bs = hyper.batch_size;
    let batches = batches_per_epoch(shard.total, p, bs);
    let lr = T::from_f64(hyper.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(comm.rank() as u64));
    let mut order: Vec<usize> = (0..shard.len()).collect();

    let mut replica = Replica {
        comm,
        params: init_params::<T>(arch, hyper.seed),
        verify: opts.verify_replicas,
        sync_bytes: 0,
        syncs: 0,
        hashes: Vec::new(),
    };
    let mut epochs = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let epoch_start = Instant::now();
        let (bytes0, syncs0) = (replica.sync_bytes, replica.syncs);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        order.shuffle(&mut rng);
        for k in 0..batches {
            let lo = (k * bs).min(order.len());
            let hi = ((k + 1) * bs).min(order.len());
            let idx = &order[lo..hi];
            let grads = if idx.is_empty() {
                None
            } else {
                let x = shard.samples.select_rows(idx)?;
                let y = shard.labels.select_rows(idx)?;
                let trace = forward(arch, &replica.params, &x)?;
                loss_sum += batch_loss(&trace, &y)?.to_f64() * idx.len() as f64;
                seen += idx.len();
                Some(backward(arch, &replica.params, &trace, &y)?)
            };
            match hyper.averaging {
                Averaging::Parameters => {
                    if let Some(g) = &grads {
                        replica.params.sgd_update(g, lr)?;
                    }
                    if hyper.sync == SyncGranularity::PerBatch {
                        replica.average_params()?;
                    }
                }
                Averaging::Gradients => {
                    let g = grads.unwrap_or_else(|| ParameterSet::zeros(arch));
                    replica.average_grads(&g, lr)?;
                }
            }
        }
        if hyper.sync == SyncGranularity::PerEpoch {
            replica.average_params()?;
        }

        let local_bytes = replica.sync_bytes - bytes0;
        let totals = comm.allreduce_sum(&[loss_sum, seen as f64, local_bytes as f64])?;
        let stats = EpochStats {
            loss: totals[0] / totals[1],
            secs: epoch_start.elapsed().as_secs_f64(),
            sync_bytes: totals[2] as u64,
            syncs: replica.syncs - syncs0,
        };
        if opts.progress {
            eprintln!(
                "epoch={} rank={} loss={} secs={:.3}",
                epoch,
                comm.rank(),
                stats.loss,
                stats.secs
            );
        }
        epochs.push(stats);

        if let Some(budget) = hyper.time_budget {
            let go = comm.broadcast(0, vec![u8::from(started.elapsed() < budget)])?;
            if go.first() != Some(&1) {
                break;
            }
        }
    }

    let accuracy = if comm.is_root() {
        match test {
            Some(t) => vec![1.0, evaluate(arch, &replica.params, t)?],
            None => vec![0.0, 0.0],
        }
    } else {
        Vec::new()
    };
    let accuracy = comm.broadcast(0, accuracy)?;
    let test_accuracy = (accuracy.first() == Some(&1.0)).then(|| accuracy[1]);

    let report = TrainReport {
        rank: comm.rank(),
        procs: p,
        epochs,
        test_accuracy,
        learning_rate: hyper.learning_rate,
        param_count: replica.params.len(),
        element_width: T::WIDTH,
        batches_per_epoch: batches,
        sync_hashes: replica.hashes,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok((report, replica.params))
}
