use parasgd_core::comm::{inprocess, tcp};
use parasgd_core::data::{synthetic_blobs, Dataset};
use parasgd_core::{AllreduceAlgorithm, CommConfig, Communicator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZES: [usize; 6] = [1, 2, 3, 4, 5, 8];

#[derive(Clone, Copy, Debug)]
enum Kind {
    InProcess,
    Tcp,
}

fn launch<R: Send>(kind: Kind, p: usize, f: impl Fn(Communicator) -> R + Sync) -> Vec<R> {
    let config = CommConfig::default();
    match kind {
        Kind::InProcess => inprocess::launch(p, config, f),
        Kind::Tcp => tcp::launch_local(p, config, f),
    }
}

fn contribution(rank: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + rank as u64);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn serial_sum(p: usize, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for r in 0..p {
        for (a, v) in acc.iter_mut().zip(contribution(r, len)) {
            *a += v;
        }
    }
    acc
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "element {i}: {g} vs {w}");
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn allreduce_sum_and_average_match_serial_oracle() {
    const LEN: usize = 10_000;
    for kind in [Kind::InProcess, Kind::Tcp] {
        for p in SIZES {
            let want = serial_sum(p, LEN);
            let mean: Vec<f64> = want.iter().map(|v| v / p as f64).collect();
            for algo in [
                AllreduceAlgorithm::Deterministic,
                AllreduceAlgorithm::RecursiveDoubling,
            ] {
                let out = launch(kind, p, |c| {
                    let mine = contribution(c.rank(), LEN);
                    let s = c.allreduce_sum_with(algo, &mine).unwrap();
                    let a = c.allreduce_average_with(algo, &mine).unwrap();
                    (s, a)
                });
                for (s, a) in &out {
                    assert_close(s, &want, 1e-12);
                    assert_close(a, &mean, 1e-12);
                }
                if algo == AllreduceAlgorithm::Deterministic {
                    for (s, a) in &out[1..] {
                        assert_eq!(bits(s), bits(&out[0].0), "{kind:?} p={p}");
                        assert_eq!(bits(a), bits(&out[0].1), "{kind:?} p={p}");
                    }
                }
            }
        }
    }
}

#[test]
fn deterministic_allreduce_is_reproducible_across_runs_and_transports() {
    let run = |kind| {
        launch(kind, 5, |c| {
            c.allreduce_average(&contribution(c.rank(), 777)).unwrap()
        })
    };
    let a = run(Kind::InProcess);
    let b = run(Kind::InProcess);
    let c = run(Kind::Tcp);
    assert_eq!(bits(&a[0]), bits(&b[0]));
    assert_eq!(bits(&a[0]), bits(&c[0]));
}

#[test]
fn average_of_identical_inputs_is_the_input() {
    for p in SIZES {
        let x = contribution(99, 500);
        let out = inprocess::launch(p, CommConfig::default(), |c| {
            c.allreduce_average(&x).unwrap()
        });
        for o in out {
            assert_close(&o, &x, 1e-15);
        }
    }
}

#[test]
fn broadcast_and_reduce_match_oracle() {
    for kind in [Kind::InProcess, Kind::Tcp] {
        for p in SIZES {
            for root in [0, p - 1] {
                let payload = contribution(root, 257);
                let out = launch(kind, p, |c| {
                    let mine = if c.rank() == root {
                        payload.clone()
                    } else {
                        Vec::new()
                    };
                    let b = c.broadcast(root, mine).unwrap();
                    let r = c.reduce_sum(root, &contribution(c.rank(), 64)).unwrap();
                    c.barrier().unwrap();
                    (b, r)
                });
                let want = serial_sum(p, 64);
                for (rank, (b, r)) in out.iter().enumerate() {
                    assert_eq!(bits(b), bits(&payload));
                    if rank == root {
                        assert_close(r.as_ref().unwrap(), &want, 1e-12);
                    } else {
                        assert!(r.is_none());
                    }
                }
            }
        }
    }
}

fn dataset_rows(ds: &Dataset) -> Vec<u64> {
    bits(ds.samples.data())
}

#[test]
fn scatter_reconstructs_the_dataset() {
    for kind in [Kind::InProcess, Kind::Tcp] {
        for p in SIZES {
            let ds: Dataset = synthetic_blobs(1003, 5, 3, 4).unwrap();
            let shards = launch(kind, p, |c| {
                c.scatter_shards(0, c.is_root().then_some(&ds)).unwrap()
            });
            let mut samples = Vec::new();
            let mut labels = Vec::new();
            let mut offset = 0;
            for s in &shards {
                assert_eq!(s.global_offset, offset);
                assert!(s.len().abs_diff(1003 / p) <= 1);
                offset += s.len();
                samples.extend(bits(s.samples.data()));
                labels.extend(bits(s.labels.data()));
            }
            assert_eq!(samples, dataset_rows(&ds), "{kind:?} p={p}");
            assert_eq!(labels, bits(ds.labels.data()));
        }
    }
}

#[test]
fn recursive_doubling_round_counts() {
    for p in [2usize, 4, 8] {
        let stats = inprocess::launch(p, CommConfig::default(), |c| {
            c.allreduce_sum_with(AllreduceAlgorithm::RecursiveDoubling, &[c.rank() as f64])
                .unwrap();
            c.stats()
        });
        for s in stats {
            assert_eq!(s.exchange_rounds, p.trailing_zeros() as u64);
            assert_eq!(s.fold_steps, 0);
        }
    }
    // p = 5 folds rank 0 into rank 1, then exchanges over four ranks
    let stats = inprocess::launch(5, CommConfig::default(), |c| {
        c.allreduce_sum_with(AllreduceAlgorithm::RecursiveDoubling, &[1.0])
            .unwrap();
        c.stats()
    });
    assert_eq!(stats[0].exchange_rounds, 0);
    assert_eq!(stats[0].fold_steps, 2);
    assert_eq!(stats[1].exchange_rounds, 2);
    assert_eq!(stats[4].exchange_rounds, 2);
}

#[test]
fn one_mebibyte_round_trip_over_tcp() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let payload: Vec<u8> = (0..1 << 20).map(|_| rng.gen()).collect();
    let out = tcp::launch_local(2, CommConfig::default(), |c| {
        if c.rank() == 0 {
            c.send(1, 7, &payload).unwrap();
            c.recv::<u8>(1, 8).unwrap()
        } else {
            let got: Vec<u8> = c.recv(0, 7).unwrap();
            c.send(0, 8, &got).unwrap();
            got
        }
    });
    assert_eq!(out[0], payload);
    assert_eq!(out[1], payload);
}

#[test]
fn fifo_per_pair_and_tag() {
    for kind in [Kind::InProcess, Kind::Tcp] {
        let out = launch(kind, 2, |c| {
            if c.rank() == 0 {
                c.send(1, 5, &[1.0f64]).unwrap();
                c.send(1, 6, &[9.0f64]).unwrap();
                c.send(1, 5, &[2.0f64]).unwrap();
                Vec::new()
            } else {
                let b = c.recv::<f64>(0, 6).unwrap();
                let a1 = c.recv::<f64>(0, 5).unwrap();
                let a2 = c.recv::<f64>(0, 5).unwrap();
                vec![a1[0], a2[0], b[0]]
            }
        });
        assert_eq!(out[1], vec![1.0, 2.0, 9.0]);
    }
}

#[test]
fn f32_payloads_reduce() {
    let out = inprocess::launch(4, CommConfig::default(), |c| {
        c.allreduce_sum(&[c.rank() as f32, 0.5]).unwrap()
    });
    for o in out {
        assert_eq!(o, vec![6.0f32, 2.0]);
    }
}
