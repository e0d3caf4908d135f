//! Analytical compute and communication model for strong scaling.
//!
//! Work per epoch per process is `(m/p)·n²·l` and each sync moves `n²·l`
//! elements. Time is closed with a latency-bandwidth model in which an
//! allreduce costs `factor·log2(p)` latencies plus `factor` full transfers
//! of the parameter vector; `factor` is 2 for reduce followed by broadcast.

use std::fmt::Write as _;

use crate::model::ArchitectureSpec;

/// Reduce plus broadcast: two passes over the tree.
pub const REDUCE_BROADCAST_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfModelInput {
    /// Samples per epoch.
    pub m: f64,
    pub p: usize,
    /// Neurons per layer.
    pub n: f64,
    /// Layer count.
    pub l: f64,
    /// FLOP/s per process, in the same unit as the FLOP count.
    pub flop_rate: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds per message.
    pub latency: f64,
    /// Bytes per element.
    pub element_width: f64,
    /// Optional constant folded into the FLOP count (1 reproduces the bare
    /// expression; 2 counts a multiply-add as two operations, and so on).
    pub flop_multiplier: f64,
    /// Allreduce algorithm constant.
    pub algorithm_factor: f64,
}

impl PerfModelInput {
    pub fn new(m: f64, p: usize, n: f64, l: f64) -> Self {
        Self {
            m,
            p,
            n,
            l,
            flop_rate: 1e9,
            bandwidth: 1e9,
            latency: 1e-6,
            element_width: 8.0,
            flop_multiplier: 1.0,
            algorithm_factor: REDUCE_BROADCAST_FACTOR,
        }
    }

    pub fn with_p(&self, p: usize) -> Self {
        Self { p, ..*self }
    }

    pub fn is_valid(&self) -> bool {
        self.p >= 1
            && [
                self.m,
                self.n,
                self.l,
                self.flop_rate,
                self.bandwidth,
                self.element_width,
                self.flop_multiplier,
                self.algorithm_factor,
            ]
            .iter()
            .all(|&v| v > 0.0)
            && self.latency >= 0.0
    }
}

/// `(m/p)·n²·l`.
pub fn flops_per_epoch(m: f64, p: usize, n: f64, l: f64) -> f64 {
    (m / p as f64) * n * n * l
}

/// `n²·l` elements per sync.
pub fn comm_volume(n: f64, l: f64) -> f64 {
    n * n * l
}

fn compute_secs(input: &PerfModelInput) -> f64 {
    input.flop_multiplier * flops_per_epoch(input.m, input.p, input.n, input.l) / input.flop_rate
}

fn comm_secs(input: &PerfModelInput, syncs_per_epoch: f64) -> f64 {
    if input.p == 1 {
        return 0.0;
    }
    let rounds = input.algorithm_factor * (input.p as f64).log2() * input.latency;
    let transfer = input.algorithm_factor * comm_volume(input.n, input.l) * input.element_width
        / input.bandwidth;
    syncs_per_epoch * (rounds + transfer)
}

/// Predicted seconds per epoch at `input.p`.
pub fn predicted_time(input: &PerfModelInput, syncs_per_epoch: f64) -> f64 {
    compute_secs(input) + comm_secs(input, syncs_per_epoch)
}

/// `T(1) / T(p)`. Evaluated as `p / (1 + p·C/T(1))`, which is the same
/// quantity and never exceeds `p` under rounding.
pub fn predicted_speedup(input: &PerfModelInput, syncs_per_epoch: f64) -> f64 {
    let t1 = compute_secs(&input.with_p(1));
    let p = input.p as f64;
    p / (1.0 + p * comm_secs(input, syncs_per_epoch) / t1)
}

/// Width and depth summaries of an architecture for the single-`n` model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchDims {
    /// Widest layer, input included.
    pub n_max: f64,
    /// Trainable layers.
    pub l: f64,
    /// Multiply-accumulates of one forward pass, summed layer by layer.
    pub exact_macs_per_sample: f64,
    /// Weights and biases, summed layer by layer.
    pub exact_params: f64,
}

pub fn arch_dims(arch: &ArchitectureSpec) -> ArchDims {
    ArchDims {
        n_max: arch.widths().into_iter().max().unwrap_or(1) as f64,
        l: arch.param_shapes().len() as f64,
        exact_macs_per_sample: arch.forward_macs() as f64,
        exact_params: arch.param_count() as f64,
    }
}

/// Both closures of the model for one architecture: `n = max width` and
/// the exact per-layer sums, which replace `n²·l` by the real MAC and
/// parameter counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelPair {
    pub max_width: PerfModelInput,
    pub exact: PerfModelInput,
}

impl ModelPair {
    /// `template` supplies machine constants; its `m`, `n`, `l` are replaced.
    pub fn for_arch(arch: &ArchitectureSpec, m: f64, template: &PerfModelInput) -> Self {
        let d = arch_dims(arch);
        let max_width = PerfModelInput {
            m,
            n: d.n_max,
            l: d.l,
            ..*template
        };
        // n = sqrt(params), l = 1 makes n²·l the parameter count; the MAC
        // count then enters through the FLOP multiplier
        let exact = PerfModelInput {
            m,
            n: d.exact_params.sqrt(),
            l: 1.0,
            flop_multiplier: template.flop_multiplier * d.exact_macs_per_sample / d.exact_params,
            ..*template
        };
        Self { max_width, exact }
    }
}

/// One line of the model-versus-measurement table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelRow {
    pub p: usize,
    pub t_predicted_s: f64,
    pub t_measured_s: Option<f64>,
    pub speedup_predicted: f64,
    pub speedup_measured: Option<f64>,
}

/// Predicted rows for every `p`, optionally joined with measured epoch
/// times. Measured speedups are relative to the measured `p = 1` time when
/// present, otherwise to the smallest measured `p` assuming it scaled
/// linearly from one process.
pub fn model_rows(
    input: &PerfModelInput,
    syncs_per_epoch: impl Fn(usize) -> f64,
    procs: &[usize],
    measured: &[(usize, f64)],
) -> Vec<ModelRow> {
    // estimated single-process time, exact when p = 1 was measured
    let base = measured
        .iter()
        .min_by_key(|(p, _)| *p)
        .map(|&(p, t)| t * p as f64);
    procs
        .iter()
        .map(|&p| {
            let at = input.with_p(p);
            let t_meas = measured.iter().find(|(q, _)| *q == p).map(|x| x.1);
            ModelRow {
                p,
                t_predicted_s: predicted_time(&at, syncs_per_epoch(p)),
                t_measured_s: t_meas,
                speedup_predicted: predicted_speedup(&at, syncs_per_epoch(p)),
                speedup_measured: t_meas.zip(base).map(|(t, b)| b / t),
            }
        })
        .collect()
}

pub const MODEL_CSV_HEADER: &str =
    "p,t_predicted_s,t_measured_s,speedup_predicted,speedup_measured";

/// CSV with an empty field where no measurement exists.
pub fn model_table_csv(rows: &[ModelRow]) -> String {
    let mut out = String::from(MODEL_CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.p,
            r.t_predicted_s,
            opt(r.t_measured_s),
            r.speedup_predicted,
            opt(r.speedup_measured)
        );
    }
    out
}
