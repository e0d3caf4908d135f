use std::fs;
use std::io::Read;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;

use log::{info, warn};
use parasgd_core::comm::{inprocess, tcp};
use parasgd_core::data::{load_named, Dataset};
use parasgd_core::model::Precision;
use parasgd_core::{
    build_architecture, train_distributed, CommConfig, Communicator, ParameterSet, Scalar,
    TrainOptions, TrainReport,
};

use crate::{BenchConfig, BenchError, BenchRecord, Transport};

/// Measurements from one run.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub p: usize,
    /// Seconds spent in the epoch loop on rank 0.
    pub wall_seconds: f64,
    pub epochs: usize,
    pub accuracy: Option<f64>,
    pub bytes: u64,
}

impl PointResult {
    pub fn from_report(report: &TrainReport) -> Self {
        Self {
            p: report.procs,
            wall_seconds: report.epochs.iter().map(|e| e.secs).sum(),
            epochs: report.epochs.len(),
            accuracy: report.test_accuracy,
            bytes: report.total_sync_bytes(),
        }
    }

    /// Line printed by rank 0 of a tcp worker group.
    pub fn to_line(&self) -> String {
        let acc = self
            .accuracy
            .map(|a| a.to_string())
            .unwrap_or_else(|| "-".into());
        format!(
            "RESULT {} {} {} {} {}",
            self.p, self.wall_seconds, self.epochs, acc, self.bytes
        )
    }

    pub fn from_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.strip_prefix("RESULT ")?.split_whitespace().collect();
        if f.len() != 5 {
            return None;
        }
        Some(Self {
            p: f[0].parse().ok()?,
            wall_seconds: f[1].parse().ok()?,
            epochs: f[2].parse().ok()?,
            accuracy: if f[3] == "-" {
                None
            } else {
                Some(f[3].parse().ok()?)
            },
            bytes: f[4].parse().ok()?,
        })
    }
}

/// Loads the configured train and test splits, truncating the training set
/// to `cfg.subset` samples.
pub fn load_data<T: Scalar>(cfg: &BenchConfig) -> Result<(Dataset<T>, Dataset<T>), BenchError> {
    let (train, test) = load_named::<T>(&cfg.dataset, &cfg.data_dir, cfg.hyper.seed)?;
    let train = match cfg.subset {
        Some(n) if n < train.len() => train.slice(0, n)?,
        _ => train,
    };
    Ok((train, test))
}

fn comm_config(cfg: &BenchConfig) -> CommConfig {
    CommConfig {
        algorithm: cfg.effective_algorithm(),
        ..CommConfig::default()
    }
}

fn options(cfg: &BenchConfig) -> TrainOptions {
    TrainOptions {
        verify_replicas: cfg.deterministic,
        progress: cfg.progress,
    }
}

/// Trains on one rank of a group; the root passes the data.
pub fn train_rank<T: Scalar>(
    cfg: &BenchConfig,
    comm: &Communicator,
    data: Option<(&Dataset<T>, &Dataset<T>)>,
) -> Result<(TrainReport, ParameterSet<T>), BenchError> {
    let arch = build_architecture(&cfg.arch)?;
    Ok(train_distributed(
        comm,
        &arch,
        &cfg.hyper,
        data.map(|d| d.0),
        data.map(|d| d.1),
        &options(cfg),
    )?)
}

/// One in-process training run with `p` rank threads; returns rank 0's
/// report and parameters.
pub fn run_training<T: Scalar>(
    cfg: &BenchConfig,
    p: usize,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<(TrainReport, ParameterSet<T>), BenchError> {
    let mut results = inprocess::launch(p, comm_config(cfg), |c| {
        let data = c.is_root().then_some((train, test));
        train_rank(cfg, &c, data)
    });
    // the root's error is the informative one; peers only see the abort
    results.swap_remove(0)
}

fn available_cores() -> usize {
    thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn sweep_inprocess<T: Scalar>(cfg: &BenchConfig) -> Result<Vec<PointResult>, BenchError> {
    let (train, test) = load_data::<T>(cfg)?;
    let cores = available_cores();
    let mut out = Vec::new();
    for &p in &cfg.procs {
        if p > cores {
            warn!("running {p} ranks on {cores} cores; timings are oversubscribed");
        }
        let (report, _) = run_training(cfg, p, &train, &test)?;
        let point = PointResult::from_report(&report);
        info!(
            "p={p} wall={:.3}s epochs={}",
            point.wall_seconds, point.epochs
        );
        out.push(point);
    }
    Ok(out)
}

fn read_hosts(path: &PathBuf) -> Result<Vec<String>, BenchError> {
    let hosts: Vec<String> = fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if hosts.is_empty() {
        return Err(BenchError::Config(format!(
            "{} lists no hosts",
            path.display()
        )));
    }
    Ok(hosts)
}

fn is_local(host: &str) -> bool {
    matches!(host, "localhost" | "127.0.0.1" | "::1")
}

/// Command-line flags that reproduce `cfg` for a `worker` invocation.
pub fn worker_args(cfg: &BenchConfig, rank: usize, size: usize, rendezvous: &str) -> Vec<String> {
    let h = &cfg.hyper;
    let mut args: Vec<String> = vec![
        "worker".into(),
        format!("--rank={rank}"),
        format!("--size={size}"),
        format!("--rendezvous={rendezvous}"),
        format!("--dataset={}", cfg.dataset),
        format!("--arch={}", cfg.arch),
        format!("--data-dir={}", cfg.data_dir.display()),
        format!("--seed={}", h.seed),
        format!("--epochs={}", h.epochs),
        format!("--lr={}", h.learning_rate),
        format!("--batch-size={}", h.batch_size),
        format!("--sync={}", h.sync),
        format!("--precision={}", h.precision),
        format!("--averaging={}", h.averaging),
        format!(
            "--allreduce={}",
            match cfg.algorithm {
                parasgd_core::AllreduceAlgorithm::Deterministic => "deterministic",
                parasgd_core::AllreduceAlgorithm::RecursiveDoubling => "recursive-doubling",
            }
        ),
    ];
    if let Some(b) = h.time_budget {
        args.push(format!("--time-budget={}", b.as_secs_f64()));
    }
    if let Some(n) = cfg.subset {
        args.push(format!("--subset={n}"));
    }
    if cfg.deterministic {
        args.push("--deterministic".into());
    }
    if cfg.progress {
        args.push("--progress".into());
    }
    args
}

fn spawn_rank(exe: &PathBuf, host: &str, args: &[String], capture: bool) -> std::io::Result<Child> {
    let mut cmd = if is_local(host) {
        let mut c = Command::new(exe);
        c.args(args);
        c
    } else {
        let mut c = Command::new("ssh");
        c.arg(host).arg(exe).args(args);
        c
    };
    cmd.stdin(Stdio::null());
    cmd.stdout(if capture {
        Stdio::piped()
    } else {
        Stdio::null()
    });
    cmd.spawn()
}

fn run_point_tcp(cfg: &BenchConfig, p: usize) -> Result<PointResult, BenchError> {
    let exe = match &cfg.worker_exe {
        Some(e) => e.clone(),
        None => std::env::current_exe()?,
    };
    let hosts = match &cfg.hosts {
        Some(path) => read_hosts(path)?,
        None => vec!["127.0.0.1".to_string()],
    };
    let rendezvous = if is_local(&hosts[0]) {
        // probe a free port; the short window before rank 0 binds it is
        // acceptable on a desk machine
        let probe = TcpListener::bind("127.0.0.1:0")?;
        probe.local_addr()?.to_string()
    } else {
        format!("{}:{}", hosts[0], DEFAULT_PORT)
    };
    let mut children = Vec::with_capacity(p);
    for rank in 0..p {
        let host = &hosts[rank % hosts.len()];
        let args = worker_args(cfg, rank, p, &rendezvous);
        match spawn_rank(&exe, host, &args, rank == 0) {
            Ok(c) => children.push(c),
            Err(e) => {
                for c in &mut children {
                    let _ = c.kill();
                }
                return Err(BenchError::Launch(format!("rank {rank} on {host}: {e}")));
            }
        }
    }
    let mut stdout = String::new();
    if let Some(out) = children[0].stdout.as_mut() {
        out.read_to_string(&mut stdout)?;
    }
    let mut failures = Vec::new();
    for (rank, c) in children.iter_mut().enumerate() {
        let status = c.wait()?;
        if !status.success() {
            failures.push(format!("rank {rank} exited with {status}"));
        }
    }
    if !failures.is_empty() {
        return Err(BenchError::Launch(failures.join("; ")));
    }
    stdout
        .lines()
        .find_map(PointResult::from_line)
        .ok_or_else(|| BenchError::Launch("rank 0 printed no result".into()))
}

/// Rendezvous port used when rank 0 runs on a remote host.
pub const DEFAULT_PORT: u16 = 29_500;

/// Body of the `worker` subcommand: joins the tcp group and trains. Rank 0
/// loads the data and returns the measurements.
pub fn run_worker(
    cfg: &BenchConfig,
    rank: usize,
    size: usize,
    rendezvous: &str,
) -> Result<Option<PointResult>, BenchError> {
    match cfg.hyper.precision {
        Precision::F32 => worker_typed::<f32>(cfg, rank, size, rendezvous),
        Precision::F64 => worker_typed::<f64>(cfg, rank, size, rendezvous),
    }
}

fn worker_typed<T: Scalar>(
    cfg: &BenchConfig,
    rank: usize,
    size: usize,
    rendezvous: &str,
) -> Result<Option<PointResult>, BenchError> {
    let comm = tcp::join(rank, size, rendezvous, comm_config(cfg))
        .map_err(|e| BenchError::Train(e.into()))?;
    let data = if rank == 0 {
        match load_data::<T>(cfg) {
            Ok(d) => Some(d),
            Err(e) => {
                comm.abort();
                return Err(e);
            }
        }
    } else {
        None
    };
    let (report, _) = train_rank(cfg, &comm, data.as_ref().map(|(a, b)| (a, b)))?;
    Ok((rank == 0).then(|| PointResult::from_report(&report)))
}

/// Runs every configured process count and derives speedups against the
/// baseline.
pub fn run_sweep(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    cfg.validate()?;
    let points = match cfg.transport {
        Transport::InProcess => match cfg.hyper.precision {
            Precision::F32 => sweep_inprocess::<f32>(cfg)?,
            Precision::F64 => sweep_inprocess::<f64>(cfg)?,
        },
        Transport::Tcp => cfg
            .procs
            .iter()
            .map(|&p| run_point_tcp(cfg, p))
            .collect::<Result<_, _>>()?,
    };
    Ok(records_from_points(&points, cfg.baseline))
}

/// Attaches speedups relative to the `baseline` point.
pub fn records_from_points(points: &[PointResult], baseline: usize) -> Vec<BenchRecord> {
    let base = points
        .iter()
        .find(|pt| pt.p == baseline)
        .map(|pt| pt.wall_seconds)
        .unwrap_or(f64::NAN);
    points
        .iter()
        .map(|pt| BenchRecord {
            p: pt.p,
            wall_seconds: pt.wall_seconds,
            epochs: pt.epochs,
            accuracy: pt.accuracy,
            bytes: pt.bytes,
            speedup: base / pt.wall_seconds,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_line_round_trip() {
        let pt = PointResult {
            p: 3,
            wall_seconds: 0.125,
            epochs: 2,
            accuracy: Some(0.75),
            bytes: 99,
        };
        assert_eq!(PointResult::from_line(&pt.to_line()), Some(pt.clone()));
        let none = PointResult {
            accuracy: None,
            ..pt
        };
        assert_eq!(PointResult::from_line(&none.to_line()), Some(none));
        assert_eq!(PointResult::from_line("epoch=1"), None);
    }

    #[test]
    fn baseline_speedup_is_exactly_one() {
        let pts: Vec<PointResult> = [(1, 4.0), (2, 2.5), (4, 1.1)]
            .into_iter()
            .map(|(p, w)| PointResult {
                p,
                wall_seconds: w,
                epochs: 1,
                accuracy: None,
                bytes: 0,
            })
            .collect();
        let recs = records_from_points(&pts, 2);
        assert_eq!(recs[1].speedup, 1.0);
        for r in &recs {
            assert_eq!(r.speedup, 2.5 / r.wall_seconds);
        }
    }
}
