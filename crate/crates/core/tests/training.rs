use std::time::Duration;

use parasgd_core::comm::{inprocess, tcp};
use parasgd_core::data::{synthetic_blobs, Dataset};
use parasgd_core::model::{
    backward, forward, init_params, Activation, Averaging, Layer, SyncGranularity,
};
use parasgd_core::train::{evaluate, EXIT_COLLECTIVE, EXIT_DATA};
use parasgd_core::{
    train_distributed, train_sequential, ArchitectureSpec, CommConfig, HyperParams, ParameterSet,
    TrainError, TrainOptions,
};

fn blob_net(features: usize, classes: usize) -> ArchitectureSpec {
    ArchitectureSpec::new(
        "blob-net",
        vec![features],
        vec![
            Layer::Dense {
                units: 4,
                activation: Activation::Sigmoid,
            },
            Layer::SoftmaxOutput { classes },
        ],
    )
    .unwrap()
}

fn run_inprocess(
    p: usize,
    arch: &ArchitectureSpec,
    hyper: &HyperParams,
    train: &Dataset,
    test: Option<&Dataset>,
    opts: &TrainOptions,
) -> Vec<Result<(parasgd_core::TrainReport, ParameterSet), TrainError>> {
    inprocess::launch(p, CommConfig::default(), |c| {
        let root = c.is_root();
        train_distributed(
            &c,
            arch,
            hyper,
            root.then_some(train),
            test.filter(|_| root),
            opts,
        )
    })
}

#[test]
fn single_rank_matches_sequential_bit_for_bit() {
    let arch = blob_net(3, 3);
    let train: Dataset = synthetic_blobs(301, 3, 3, 2).unwrap();
    for sync in [SyncGranularity::PerBatch, SyncGranularity::PerEpoch] {
        for averaging in [Averaging::Parameters, Averaging::Gradients] {
            if averaging == Averaging::Gradients && sync == SyncGranularity::PerEpoch {
                continue;
            }
            let hyper = HyperParams {
                learning_rate: 0.1,
                batch_size: 16,
                epochs: 3,
                sync,
                averaging,
                ..Default::default()
            };
            let (seq_report, seq) = train_sequential(&arch, &hyper, &train, None).unwrap();
            let (dist_report, dist) =
                run_inprocess(1, &arch, &hyper, &train, None, &Default::default())
                    .pop()
                    .unwrap()
                    .unwrap();
            assert!(dist.bit_eq(&seq), "{sync} {averaging}");
            for (a, b) in dist_report.epochs.iter().zip(&seq_report.epochs) {
                assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            }
        }
    }
}

#[test]
fn single_rank_matches_sequential_in_f32() {
    let arch = blob_net(2, 2);
    let train: Dataset<f32> = synthetic_blobs(100, 2, 2, 3).unwrap();
    let hyper = HyperParams {
        learning_rate: 0.2,
        batch_size: 7,
        epochs: 2,
        ..Default::default()
    };
    let (_, seq) = train_sequential(&arch, &hyper, &train, None).unwrap();
    let out = inprocess::launch(1, CommConfig::default(), |c| {
        train_distributed(&c, &arch, &hyper, Some(&train), None, &Default::default()).unwrap()
    });
    assert!(out[0].1.bit_eq(&seq));
    assert_eq!(out[0].0.element_width, 4);
}

/// One batch per shard and one epoch: the averaged replicas must equal one
/// step on the mean of the shard gradients.
fn averaging_identity(p: usize, averaging: Averaging) {
    let arch = blob_net(3, 2);
    let per_shard = 6;
    let train: Dataset = synthetic_blobs(p * per_shard, 3, 2, 10).unwrap();
    let hyper = HyperParams {
        learning_rate: 0.3,
        batch_size: per_shard,
        epochs: 1,
        averaging,
        ..Default::default()
    };
    let out = run_inprocess(p, &arch, &hyper, &train, None, &Default::default());

    let theta: ParameterSet = init_params(&arch, hyper.seed);
    let mut mean = vec![0.0; theta.len()];
    for r in 0..p {
        let shard = train.slice(r * per_shard, per_shard).unwrap();
        let trace = forward(&arch, &theta, &shard.samples).unwrap();
        let g = backward(&arch, &theta, &trace, &shard.labels)
            .unwrap()
            .flatten();
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / p as f64;
        }
    }
    let oracle: Vec<f64> = theta
        .flatten()
        .iter()
        .zip(&mean)
        .map(|(t, g)| t - hyper.learning_rate * g)
        .collect();
    for res in out {
        let (report, params) = res.unwrap();
        assert_eq!(report.total_syncs(), 1);
        for (got, want) in params.flatten().iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-12, "p={p}: {got} vs {want}");
        }
    }
}

#[test]
fn parameter_averaging_equals_mean_gradient_step() {
    averaging_identity(2, Averaging::Parameters);
    averaging_identity(4, Averaging::Parameters);
}

#[test]
fn gradient_averaging_equals_mean_gradient_step() {
    averaging_identity(2, Averaging::Gradients);
    averaging_identity(4, Averaging::Gradients);
}

#[test]
fn replicas_stay_identical_and_learn_blobs() {
    let arch = blob_net(2, 2);
    let all: Dataset = synthetic_blobs(1200, 2, 2, 6).unwrap();
    let (train, test) = all.split_tail(200).unwrap();
    let hyper = HyperParams {
        learning_rate: 0.5,
        epochs: 10,
        ..Default::default()
    };
    let opts = TrainOptions {
        verify_replicas: true,
        progress: false,
    };
    let out: Vec<_> = run_inprocess(4, &arch, &hyper, &train, Some(&test), &opts)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let (first_report, first) = &out[0];
    assert_eq!(
        first_report.sync_hashes.len() as u64,
        first_report.total_syncs()
    );
    assert_eq!(first_report.total_syncs(), 10 * 4);
    for (report, params) in &out[1..] {
        assert!(params.bit_eq(first));
        assert_eq!(report.sync_hashes, first_report.sync_hashes);
        assert_eq!(report.test_accuracy, first_report.test_accuracy);
    }
    let acc = first_report.test_accuracy.unwrap();
    assert!(acc >= 0.9, "accuracy {acc}");
    assert_eq!(evaluate(&arch, first, &test).unwrap(), acc);
}

#[test]
fn sync_counts_and_bytes_follow_the_algorithm() {
    let arch = blob_net(3, 3);
    let train: Dataset = synthetic_blobs(400, 3, 3, 1).unwrap();
    for (sync, per_epoch) in [
        (SyncGranularity::PerBatch, 4u64),
        (SyncGranularity::PerEpoch, 1),
    ] {
        let hyper = HyperParams {
            batch_size: 25,
            epochs: 3,
            sync,
            ..Default::default()
        };
        let p = 4;
        let out = run_inprocess(p, &arch, &hyper, &train, None, &Default::default());
        let (report, params) = out.into_iter().next().unwrap().unwrap();
        assert_eq!(report.batches_per_epoch, 4);
        assert!(report.epochs.iter().all(|e| e.syncs == per_epoch));
        // reduce and broadcast each move p - 1 full vectors
        let per_sync = 2 * (p as u64 - 1) * params.len() as u64 * 8;
        for e in &report.epochs {
            assert_eq!(e.sync_bytes, per_sync * e.syncs);
        }
        let ratio = report.bytes_per_sync_per_rank() / (params.len() * 8) as f64;
        assert!((0.5..=2.0).contains(&ratio), "{ratio}");
    }
}

#[test]
fn tcp_and_inprocess_training_agree() {
    let arch = blob_net(2, 3);
    let train: Dataset = synthetic_blobs(150, 2, 3, 8).unwrap();
    let hyper = HyperParams {
        learning_rate: 0.2,
        batch_size: 10,
        epochs: 2,
        ..Default::default()
    };
    let local = run_inprocess(3, &arch, &hyper, &train, None, &Default::default());
    let remote = tcp::launch_local(3, CommConfig::default(), |c| {
        let root = c.is_root();
        train_distributed(
            &c,
            &arch,
            &hyper,
            root.then_some(&train),
            None,
            &Default::default(),
        )
    });
    let a = &local[0].as_ref().unwrap().1;
    let b = &remote[2].as_ref().unwrap().1;
    assert!(a.bit_eq(b));
}

#[test]
fn time_budget_stops_every_rank_together() {
    let arch = blob_net(2, 2);
    let train: Dataset = synthetic_blobs(200, 2, 2, 8).unwrap();
    let hyper = HyperParams {
        epochs: 50,
        time_budget: Some(Duration::ZERO),
        ..Default::default()
    };
    for res in run_inprocess(3, &arch, &hyper, &train, None, &Default::default()) {
        assert_eq!(res.unwrap().0.epochs.len(), 1);
    }
}

#[test]
fn incompatible_data_aborts_the_group() {
    let arch = blob_net(5, 2);
    let train: Dataset = synthetic_blobs(100, 3, 2, 8).unwrap();
    let out = run_inprocess(
        3,
        &arch,
        &HyperParams::default(),
        &train,
        None,
        &Default::default(),
    );
    let codes: Vec<i32> = out
        .iter()
        .map(|r| r.as_ref().unwrap_err().exit_code())
        .collect();
    assert_eq!(codes, vec![EXIT_DATA, EXIT_COLLECTIVE, EXIT_COLLECTIVE]);
}

#[test]
fn too_few_samples_for_the_group() {
    let arch = blob_net(2, 2);
    let train: Dataset = synthetic_blobs(3, 2, 2, 8).unwrap();
    let out = run_inprocess(
        4,
        &arch,
        &HyperParams::default(),
        &train,
        None,
        &Default::default(),
    );
    assert!(out.iter().all(|r| r.is_err()));
}
