use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use parasgd_bench::calibrate::calibrate;
use parasgd_bench::sweep::{load_data, run_training, run_worker, PointResult};
use parasgd_bench::{
    emit_table, nominal_train_samples, parse_csv, run_sweep, write_output, BenchConfig, BenchError,
    TableFormat, Transport,
};
use parasgd_core::data::DatasetTag;
use parasgd_core::model::{write_checkpoint, Averaging, Precision, SyncGranularity};
use parasgd_core::perf::{model_rows, model_table_csv, ModelPair};
use parasgd_core::train::batches_per_epoch;
use parasgd_core::{build_architecture, AllreduceAlgorithm, HyperParams, Scalar};

#[derive(Parser)]
#[command(
    name = "parasgd",
    version,
    about = "Data-parallel SGD training and strong-scaling benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep process counts and emit a speedup table.
    Bench(BenchArgs),
    /// One training run.
    Train(TrainArgs),
    /// Predicted speedup curve, optionally joined with measured results.
    Perfmodel(PerfArgs),
    #[command(hide = true)]
    Worker(WorkerArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// mnist, cifar10, adult, acoustic, higgs or synthetic[:m[:features[:classes]]]
    #[arg(long, default_value = "synthetic:1000:2:2")]
    dataset: String,
    /// adult-dnn, acoustic-dnn, mnist-dnn, mnist-cnn, cifar10-dnn, cifar10-cnn or higgs-dnn
    #[arg(long)]
    arch: String,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Stop after the first epoch that ends past this many seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// per_batch or per_epoch
    #[arg(long, default_value = "per_batch")]
    sync: String,
    /// f32 or f64
    #[arg(long, default_value = "f64")]
    precision: String,
    /// parameters or gradients
    #[arg(long, default_value = "parameters")]
    averaging: String,
    /// deterministic or recursive-doubling
    #[arg(long, default_value = "deterministic")]
    allreduce: String,
    /// Deterministic allreduce plus replica hash checks after every sync.
    #[arg(long)]
    deterministic: bool,
    /// Train on the first N samples only.
    #[arg(long)]
    subset: Option<usize>,
    /// Per-epoch progress lines on stderr.
    #[arg(long)]
    progress: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    procs: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    baseline: usize,
    /// inprocess or tcp
    #[arg(long, default_value = "inprocess")]
    transport: String,
    /// Host list for tcp runs, one per line.
    #[arg(long)]
    hosts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or markdown
    #[arg(long, default_value = "csv")]
    format: String,
    /// Overwrite an existing --out file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    procs: usize,
    /// Write the final parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PerfArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    procs: Vec<usize>,
    /// Samples per epoch; defaults to the dataset's nominal training size.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    flop_rate: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    latency: Option<f64>,
    /// Use n = widest layer instead of exact per-layer sums.
    #[arg(long)]
    max_width: bool,
    /// A bench CSV whose timings are joined into the table.
    #[arg(long)]
    measured: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct WorkerArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    rendezvous: String,
}

fn config(c: &Common) -> Result<BenchConfig, BenchError> {
    let dataset: DatasetTag = c.dataset.parse()?;
    let hyper = HyperParams {
        learning_rate: c.lr,
        batch_size: c.batch_size,
        epochs: c.epochs,
        seed: c.seed,
        sync: c.sync.parse::<SyncGranularity>()?,
        precision: c.precision.parse::<Precision>()?,
        averaging: c.averaging.parse::<Averaging>()?,
        time_budget: c.time_budget.map(Duration::from_secs_f64),
    };
    let algorithm = match c.allreduce.as_str() {
        "deterministic" => AllreduceAlgorithm::Deterministic,
        "recursive-doubling" => AllreduceAlgorithm::RecursiveDoubling,
        other => return Err(BenchError::Config(format!("unknown allreduce {other:?}"))),
    };
    let mut cfg = BenchConfig::new(dataset, c.arch.clone());
    cfg.hyper = hyper;
    cfg.algorithm = algorithm;
    cfg.deterministic = c.deterministic;
    cfg.data_dir = c.data_dir.clone();
    cfg.subset = c.subset;
    cfg.progress = c.progress;
    build_architecture(&cfg.arch)?;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&PathBuf>, force: bool) -> Result<(), BenchError> {
    match out {
        Some(path) => write_output(path, text, force),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn bench(args: BenchArgs) -> Result<(), BenchError> {
    let mut cfg = config(&args.common)?;
    cfg.procs = args.procs;
    cfg.baseline = args.baseline;
    cfg.transport = args.transport.parse::<Transport>()?;
    cfg.hosts = args.hosts;
    let format: TableFormat = args.format.parse()?;
    if let Some(out) = &args.out {
        if out.exists() && !args.force {
            return Err(BenchError::OutputExists(out.clone()));
        }
    }
    eprintln!(
        "# dataset={} arch={} lr={} batch={} epochs={} sync={} averaging={} precision={} transport={} (lr is not scaled with p)",
        cfg.dataset,
        cfg.arch,
        cfg.hyper.learning_rate,
        cfg.hyper.batch_size,
        cfg.hyper.epochs,
        cfg.hyper.sync,
        cfg.hyper.averaging,
        cfg.hyper.precision,
        cfg.transport
    );
    let records = run_sweep(&cfg)?;
    emit(&emit_table(&records, format), args.out.as_ref(), args.force)
}

fn train_typed<T: Scalar>(cfg: &BenchConfig, args: &TrainArgs) -> Result<(), BenchError> {
    let (train, test) = load_data::<T>(cfg)?;
    let (report, params) = run_training(cfg, args.procs, &train, &test)?;
    let pt = PointResult::from_report(&report);
    println!(
        "procs={} epochs={} wall_seconds={} final_loss={} accuracy={} sync_bytes={} learning_rate={}",
        pt.p,
        pt.epochs,
        pt.wall_seconds,
        report.final_loss().unwrap_or(f64::NAN),
        pt.accuracy.map(|a| a.to_string()).unwrap_or_else(|| "-".into()),
        pt.bytes,
        report.learning_rate
    );
    if let Some(path) = &args.checkpoint {
        if path.exists() && !args.force {
            return Err(BenchError::OutputExists(path.clone()));
        }
        let mut f = fs::File::create(path)?;
        write_checkpoint(&mut f, &cfg.arch, &params)?;
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), BenchError> {
    let cfg = config(&args.common)?;
    if args.procs == 0 {
        return Err(BenchError::Config("--procs must be positive".into()));
    }
    match cfg.hyper.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &args),
        Precision::F64 => train_typed::<f64>(&cfg, &args),
    }
}

fn perfmodel(args: PerfArgs) -> Result<(), BenchError> {
    let cfg = config(&args.common)?;
    let arch = build_architecture(&cfg.arch)?;
    let m = args
        .samples
        .or(cfg.subset)
        .unwrap_or_else(|| nominal_train_samples(&cfg.dataset));
    let width = cfg.hyper.precision.width();
    let mut template =
        if args.flop_rate.is_none() || args.bandwidth.is_none() || args.latency.is_none() {
            info!("calibrating machine constants");
            calibrate(&arch, Duration::from_millis(300)).template(width)
        } else {
            parasgd_core::perf::PerfModelInput::new(1.0, 1, 1.0, 1.0)
        };
    template.element_width = width as f64;
    if let Some(v) = args.flop_rate {
        template.flop_rate = v;
    }
    if let Some(v) = args.bandwidth {
        template.bandwidth = v;
    }
    if let Some(v) = args.latency {
        template.latency = v;
    }
    let pair = ModelPair::for_arch(&arch, m as f64, &template);
    let input = if args.max_width {
        pair.max_width
    } else {
        pair.exact
    };
    let measured: Vec<(usize, f64)> = match &args.measured {
        Some(path) => parse_csv(&fs::read_to_string(path)?)?
            .into_iter()
            .filter(|r| r.epochs > 0)
            .map(|r| (r.p, r.wall_seconds / r.epochs as f64))
            .collect(),
        None => Vec::new(),
    };
    let per_batch = cfg.hyper.sync == SyncGranularity::PerBatch;
    let bs = cfg.hyper.batch_size;
    let syncs = |p: usize| {
        if per_batch {
            batches_per_epoch(m, p, bs) as f64
        } else {
            1.0
        }
    };
    let rows = model_rows(&input, syncs, &args.procs, &measured);
    emit(&model_table_csv(&rows), args.out.as_ref(), args.force)
}

fn worker(args: WorkerArgs) -> Result<(), BenchError> {
    let cfg = config(&args.common)?;
    if let Some(pt) = run_worker(&cfg, args.rank, args.size, &args.rendezvous)? {
        println!("{}", pt.to_line());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            // exit code 2 is reserved for collective failures
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Cmd::Bench(a) => bench(a),
        Cmd::Train(a) => train(a),
        Cmd::Perfmodel(a) => perfmodel(a),
        Cmd::Worker(a) => worker(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
