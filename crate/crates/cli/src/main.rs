//! `landscape`: train small models, compute loss-landscape grids, inspect and
//! clip grid CSVs, run the built-in case studies, and serve the HTTP API.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failure while running.

mod case_study;
mod commands;
mod failure;
mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{ArgGroup, Parser, Subcommand};
use landscape_core::analysis::ClipSpec;
use landscape_core::{DatasetSpec, EvalConfig, GridSpec, LossKind, Subsample, TrainConfig};
use landscape_service::{AppState, ServiceConfig};

use crate::case_study::{default_run, Study};
use crate::commands::{read_model, ClipRun, ComputeRun, TrainRun, WeightsArg};
use crate::failure::{invalid, Classify, CmdResult, Failure};
use crate::manifest::{manifest_path_for, sha256_hex, RunConfig, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "landscape", version, about = "Loss-landscape workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model with mini-batch SGD and save its parameters as JSON
    Train(TrainArgs),
    /// Evaluate a 2D loss-landscape grid around a model and write it as CSV
    Compute(ComputeArgs),
    /// Print summary statistics for every experiment in a grid CSV
    Stats {
        /// Grid CSV (`id,x,y,loss`)
        csv: PathBuf,
        /// Print JSON instead of one line per experiment
        #[arg(long)]
        json: bool,
    },
    /// Mask grid points outside a radius (written as NaN)
    Clip {
        /// Grid CSV (`id,x,y,loss`)
        csv: PathBuf,
        /// Clip radius, or `auto` for the circle inscribed in each grid
        #[arg(long, default_value = "auto")]
        radius: ClipSpec,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in case study end to end
    CaseStudy {
        #[arg(value_enum)]
        study: Study,
        /// Directory for the CSV, smoothness report, and manifest
        #[arg(long, default_value = "case-study-out")]
        out_dir: PathBuf,
        /// Grid-evaluation threads [default: number of CPUs]
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Serve the HTTP API and web UI
    Serve(ServeArgs),
    /// Re-run a command from its run manifest
    Replay {
        manifest: PathBuf,
        /// Re-run into a scratch directory and compare output hashes with the
        /// manifest instead of overwriting the outputs
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Debug, clap::Args)]
struct TrainOpts {
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// SGD learning rate
    #[arg(long = "lr", default_value_t = 0.05)]
    learning_rate: f64,
    /// Passes over the dataset
    #[arg(long, default_value_t = 10)]
    epochs: usize,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// Model spec file
    #[arg(long)]
    model: PathBuf,
    /// Training data as kind:size:seed (kinds: blobs, xor-image)
    #[arg(long)]
    dataset: DatasetSpec,
    #[command(flatten)]
    train: TrainOpts,
    /// Seed for initialization and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loss: cross-entropy (ce) or mse
    #[arg(long, default_value = "cross-entropy")]
    loss: LossKind,
    /// Output parameter file (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("source").required(true).args(["weights", "train"])))]
struct ComputeArgs {
    /// Model spec file
    #[arg(long)]
    model: PathBuf,
    /// Trained parameters (JSON, as written by `train`)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Train the model first (see the training options)
    #[arg(long)]
    train: bool,
    #[command(flatten)]
    train_opts: TrainOpts,
    /// Evaluation (and training) data as kind:size:seed
    #[arg(long)]
    dataset: DatasetSpec,
    /// Grid as xmin:xmax:ymin:ymax:resx:resy
    #[arg(long, default_value = "-1:1:-1:1:60:60", allow_hyphen_values = true)]
    grid: GridSpec,
    /// Evaluation subset size, or `full`
    #[arg(long, default_value = "100")]
    subsample: Subsample,
    /// Seed for the directions; also the default subsample and training seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subsample seed [default: --seed]
    #[arg(long)]
    subsample_seed: Option<u64>,
    /// Training seed [default: --seed]
    #[arg(long)]
    train_seed: Option<u64>,
    /// Loss: cross-entropy (ce) or mse
    #[arg(long, default_value = "cross-entropy")]
    loss: LossKind,
    /// Experiment id written to the CSV
    #[arg(long, default_value = "landscape")]
    id: String,
    /// Experiment display name [default: the id]
    #[arg(long)]
    name: Option<String>,
    /// Grid-evaluation threads; the result does not depend on this [default: number of CPUs]
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV
    #[arg(long, default_value = "landscape.csv")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long, default_value_t = landscape_service::DEFAULT_PORT)]
    port: u16,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Experiment store; loose CSVs placed here are imported at startup
    #[arg(long, default_value = "landscape-data")]
    data_dir: PathBuf,
    /// Grid-evaluation threads per job [default: number of CPUs]
    #[arg(long)]
    workers: Option<usize>,
    /// Size limit for uploads and URL fetches, in bytes
    #[arg(long, default_value_t = landscape_service::DEFAULT_FETCH_CAP_BYTES)]
    fetch_cap_bytes: u64,
    /// Timeout for URL fetches
    #[arg(long, default_value_t = landscape_service::DEFAULT_FETCH_TIMEOUT_SECS)]
    fetch_timeout_secs: u64,
    /// Built web UI to serve at `/`
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Print the local URL to open in a browser
    #[arg(long)]
    open: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            failure.exit_code()
        }
    }
}

fn run(command: Command) -> CmdResult<()> {
    match command {
        Command::Train(args) => {
            let (model, _) = read_model(&args.model)?;
            let run = TrainRun {
                model_file: args.model,
                model,
                dataset: args.dataset,
                loss_kind: args.loss,
                train: train_config(&args.train, args.seed),
                out: args.out,
            };
            let manifest = manifest_path_for(&run.out);
            execute(RunConfig::Train(run), &manifest)
        }
        Command::Compute(args) => {
            let run = compute_run(args)?;
            let manifest = manifest_path_for(&run.out);
            execute(RunConfig::Compute(run), &manifest)
        }
        Command::Stats { csv, json } => commands::stats(&csv, json),
        Command::Clip { csv, radius, out } => {
            let manifest = manifest_path_for(&out);
            execute(RunConfig::Clip(ClipRun { input: csv, radius, out }), &manifest)
        }
        Command::CaseStudy { study, out_dir, workers } => {
            let run = default_run(study, &out_dir, workers.unwrap_or_else(default_workers).max(1));
            let manifest = manifest_path_for(&run.csv_path());
            execute(RunConfig::CaseStudy(run), &manifest)
        }
        Command::Serve(args) => serve(args),
        Command::Replay { manifest, verify } => replay(&manifest, verify),
    }
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: opts.batch_size,
        learning_rate: opts.learning_rate,
        epochs: opts.epochs,
        seed,
    }
}

fn compute_run(args: ComputeArgs) -> CmdResult<ComputeRun> {
    let (model, _) = read_model(&args.model)?;
    let weights = match args.weights {
        Some(path) => {
            let bytes = std::fs::read(&path).invalid_ctx(format!("reading weights file {}", path.display()))?;
            WeightsArg::File { path, sha256: sha256_hex(&bytes) }
        }
        None => WeightsArg::Train {
            config: train_config(&args.train_opts, args.train_seed.unwrap_or(args.seed)),
        },
    };
    if args.id.is_empty() {
        return Err(invalid("--id must be nonempty"));
    }
    Ok(ComputeRun {
        model_file: args.model,
        model,
        weights,
        dataset: args.dataset,
        grid: args.grid,
        eval: EvalConfig {
            subsample: args.subsample,
            subsample_seed: args.subsample_seed.unwrap_or(args.seed),
            loss_kind: args.loss,
        },
        direction_seed: args.seed,
        id: args.id,
        name: args.name,
        workers: args.workers.unwrap_or_else(default_workers).max(1),
        out: args.out,
    })
}

fn dispatch(run: &RunConfig) -> CmdResult<manifest::Produced> {
    match run {
        RunConfig::Train(r) => r.execute(),
        RunConfig::Compute(r) => r.execute(),
        RunConfig::Clip(r) => r.execute(),
        RunConfig::CaseStudy(r) => r.execute(),
    }
}

fn execute(run: RunConfig, manifest_path: &Path) -> CmdResult<()> {
    let start = Instant::now();
    let produced = dispatch(&run)?;
    let manifest = RunManifest::new(run, &produced, start.elapsed().as_secs_f64())?;
    manifest.write(manifest_path)?;
    println!("manifest {}", manifest_path.display());
    Ok(())
}

/// Points every output of `run` into `dir`, keeping file names.
fn relocate(run: &mut RunConfig, dir: &Path) {
    let into = |p: &Path| dir.join(p.file_name().unwrap_or_default());
    match run {
        RunConfig::Train(r) => r.out = into(&r.out),
        RunConfig::Compute(r) => r.out = into(&r.out),
        RunConfig::Clip(r) => r.out = into(&r.out),
        RunConfig::CaseStudy(r) => r.out_dir = dir.to_path_buf(),
    }
}

fn replay(path: &Path, verify: bool) -> CmdResult<()> {
    let recorded = RunManifest::read(path)?;
    recorded.check_inputs()?;
    let mut run = recorded.run.clone();
    if !verify {
        return execute(run, path);
    }
    let scratch = std::env::temp_dir().join(format!("landscape-replay-{}", std::process::id()));
    std::fs::create_dir_all(&scratch).runtime_ctx("creating scratch directory")?;
    relocate(&mut run, &scratch);
    let result = dispatch(&run).and_then(|produced| {
        let mut mismatches = Vec::new();
        for (old, new) in recorded.outputs.iter().zip(&produced.outputs) {
            let now = manifest::FileRecord::of(new)?;
            let same = now.sha256 == old.sha256;
            println!("{} {}", if same { "identical" } else { "DIFFERENT" }, old.path.display());
            if !same {
                mismatches.push(old.path.display().to_string());
            }
        }
        if recorded.outputs.len() != produced.outputs.len() {
            mismatches.push("output count".into());
        }
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Failure::Runtime(anyhow::anyhow!("replay differs from the recorded run: {}", mismatches.join(", "))))
        }
    });
    let _ = std::fs::remove_dir_all(&scratch);
    result
}

fn serve(args: ServeArgs) -> CmdResult<()> {
    let mut config = ServiceConfig::new(&args.data_dir);
    config.workers = args.workers.unwrap_or_else(default_workers).max(1);
    config.fetch_cap_bytes = args.fetch_cap_bytes;
    config.fetch_timeout = Duration::from_secs(args.fetch_timeout_secs);
    if let Some(dir) = &args.static_dir {
        if !dir.join("index.html").is_file() {
            return Err(invalid(format!("{} has no index.html", dir.display())));
        }
    }
    config.static_dir = args.static_dir;
    let state = AppState::open(config).invalid_ctx(format!("opening data dir {}", args.data_dir.display()))?;
    let runtime = tokio::runtime::Runtime::new().runtime()?;
    runtime.block_on(async {
        let addr = SocketAddr::new(args.host, args.port);
        let listener = landscape_service::bind(addr).await.runtime()?;
        let local = listener.local_addr().runtime()?;
        if args.open {
            println!("open http://{local}/");
        }
        tracing::info!(addr = %local, data_dir = %args.data_dir.display(), "serving");
        axum_serve(listener, state).await
    })
}

async fn axum_serve(listener: tokio::net::TcpListener, state: AppState) -> CmdResult<()> {
    landscape_service::serve_on(listener, state).await.runtime()
}
