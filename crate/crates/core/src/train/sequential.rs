use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::distributed::check_fits;
use super::{evaluate, EpochStats, TrainError, TrainReport};
use crate::data::Dataset;
use crate::model::{
    backward, batch_loss, forward, init_params, sgd_step, ArchitectureSpec, HyperParams,
    ParameterSet,
};
use crate::tensor::Scalar;

/// Plain single-process mini-batch SGD over the whole training set, with the
/// same seeding and batch order a one-rank distributed run uses.
pub fn train_sequential<T: Scalar>(
    arch: &ArchitectureSpec,
    hyper: &HyperParams,
    train: &Dataset<T>,
    test: Option<&Dataset<T>>,
) -> Result<(TrainReport, ParameterSet<T>), TrainError> {
    hyper.validate()?;
    check_fits(arch, train)?;
    let started = Instant::now();
    let lr = T::from_f64(hyper.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = init_params::<T>(arch, hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    for _ in 0..hyper.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(hyper.batch_size) {
            let x = train.samples.select_rows(idx)?;
            let y = train.labels.select_rows(idx)?;
            let trace = forward(arch, &params, &x)?;
            loss_sum += batch_loss(&trace, &y)?.to_f64() * idx.len() as f64;
            let grads = backward(arch, &params, &trace, &y)?;
            params = sgd_step(&params, &grads, lr)?;
        }
        epochs.push(EpochStats {
            loss: loss_sum / train.len() as f64,
            secs: t0.elapsed().as_secs_f64(),
            sync_bytes: 0,
            syncs: 0,
        });
        if hyper.time_budget.is_some_and(|b| started.elapsed() >= b) {
            break;
        }
    }
    let test_accuracy = test.map(|t| evaluate(arch, &params, t)).transpose()?;
    let report = TrainReport {
        rank: 0,
        procs: 1,
        epochs,
        test_accuracy,
        learning_rate: hyper.learning_rate,
        param_count: params.len(),
        element_width: T::WIDTH,
        batches_per_epoch: train.len().div_ceil(hyper.batch_size),
        sync_hashes: Vec::new(),
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok((report, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::model::build_architecture;

    #[test]
    fn mnist_dnn_loss_strictly_decreases() {
        let arch = build_architecture("mnist-dnn").unwrap();
        let m = 1000;
        let blobs = synthetic_blobs::<f64>(m, 784, 10, 11).unwrap();
        let hyper = HyperParams::default();
        let (report, _) = train_sequential(&arch, &hyper, &blobs, None).unwrap();
        assert_eq!(report.epochs.len(), 5);
        for w in report.epochs.windows(2) {
            assert!(w[1].loss < w[0].loss, "{:?}", report.epochs);
        }
    }
}
