//! Measures the machine constants the performance model needs.
//!
//! The FLOP rate is expressed in forward multiply-accumulates of training
//! throughput: samples trained per second times the architecture's forward
//! MAC count. With that unit the exact per-layer model predicts epoch time
//! directly.

use std::time::{Duration, Instant};

use parasgd_core::comm::inprocess;
use parasgd_core::model::{backward, forward, init_params, sgd_step};
use parasgd_core::perf::PerfModelInput;
use parasgd_core::{ArchitectureSpec, CommConfig, Communicator, ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub flop_rate: f64,
    /// Seconds per message.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
}

impl Calibration {
    /// A model input carrying these constants; `m`, `p`, `n` and `l` are
    /// placeholders to be replaced.
    pub fn template(&self, element_width: usize) -> PerfModelInput {
        PerfModelInput {
            flop_rate: self.flop_rate,
            latency: self.latency,
            bandwidth: self.bandwidth,
            element_width: element_width as f64,
            ..PerfModelInput::new(1.0, 1, 1.0, 1.0)
        }
    }
}

fn time_until<F: FnMut()>(min: Duration, mut f: F) -> (usize, f64) {
    let start = Instant::now();
    let mut reps = 0;
    while reps == 0 || start.elapsed() < min {
        f();
        reps += 1;
    }
    (reps, start.elapsed().as_secs_f64())
}

/// Training throughput of one process on `arch`, in forward MACs per second.
pub fn measure_flop_rate(arch: &ArchitectureSpec, batch: usize, min: Duration) -> f64 {
    let mut params: ParameterSet = init_params(arch, 0);
    let mut shape = vec![batch];
    shape.extend_from_slice(arch.input_shape());
    let x = Tensor::from_fn(&shape, |i| ((i * 7919) % 255) as f64 / 255.0);
    let classes = arch.classes();
    let y = Tensor::from_fn(&[batch, classes], |i| {
        f64::from(u8::from(i % classes == (i / classes) % classes))
    });
    let (reps, secs) = time_until(min, || {
        let trace = forward(arch, &params, &x).expect("shapes from the architecture");
        let g = backward(arch, &params, &trace, &y).expect("shapes from the architecture");
        params = sgd_step(&params, &g, 1e-6).expect("same architecture");
    });
    (reps * batch) as f64 * arch.forward_macs() as f64 / secs
}

/// Seconds per call of `op`, averaged over a rep count that rank 0 picks
/// from one pilot call so that every rank runs the same number of calls.
fn time_collective<F: FnMut()>(c: &Communicator, min: Duration, mut op: F) -> f64 {
    let start = Instant::now();
    op();
    let pilot = start.elapsed().as_secs_f64().max(1e-9);
    let reps = (min.as_secs_f64() / pilot).ceil().max(1.0);
    let reps = c.broadcast(0, vec![reps]).expect("two healthy ranks")[0] as u64;
    let start = Instant::now();
    for _ in 0..reps {
        op();
    }
    start.elapsed().as_secs_f64() / reps as f64
}

/// Latency and bandwidth of the in-process transport from two-rank
/// allreduces of one element and of `len` elements.
pub fn measure_network(len: usize, min: Duration) -> (f64, f64) {
    let small = inprocess::launch(2, CommConfig::default(), |c| {
        time_collective(&c, min, || {
            c.allreduce_sum(&[1.0f64]).expect("two healthy ranks");
        })
    });
    // reduce then broadcast: two messages on the critical path
    let latency = small[0] / 2.0;
    let big = vec![1.0f64; len.max(1)];
    let large = inprocess::launch(2, CommConfig::default(), |c| {
        time_collective(&c, min, || {
            c.allreduce_sum(&big).expect("two healthy ranks");
        })
    });
    let per_call = large[0];
    let transfer = (per_call - 2.0 * latency).max(per_call * 0.1);
    let bandwidth = 2.0 * len.max(1) as f64 * 8.0 / transfer;
    (latency, bandwidth)
}

/// Both measurements for one architecture.
pub fn calibrate(arch: &ArchitectureSpec, min: Duration) -> Calibration {
    let flop_rate = measure_flop_rate(arch, 64, min);
    let (latency, bandwidth) = measure_network(arch.param_count(), min);
    Calibration {
        flop_rate,
        latency,
        bandwidth,
    }
}
