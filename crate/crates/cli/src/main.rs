//! `stppp`: align event streams, evaluate estimates, fit priors, generate
//! synthetic datasets and time the loss.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_prior, RunConfig};
use crate::error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "stppp", version, about = "Event-camera motion estimation by point-process likelihood")]
struct Cli {
    /// Number of worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate motion for every packet of a dataset.
    Align(AlignArgs),
    /// Compare estimates with IMU or motion-capture ground truth.
    Eval(EvalArgs),
    /// Fit the gamma prior to unaligned event counts.
    FitPrior(FitPriorArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Time single loss evaluations over a range of packet sizes.
    Bench(BenchArgs),
}

/// Settings shared by every command; flags override the JSON config.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// rotation, affine or translation.
    #[arg(long)]
    model: Option<String>,
    /// nb, poisson-ml or cmax.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    packet_size: Option<usize>,
    #[arg(long)]
    pad: Option<usize>,
    /// Gaussian smoothing in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// `fit`, `R,Q`, or a prior.json path.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Start every packet from zero motion.
    #[arg(long)]
    no_warm_start: bool,
    /// Sensor width in pixels.
    #[arg(long)]
    width: Option<u32>,
    /// Sensor height in pixels.
    #[arg(long)]
    height: Option<u32>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(m) = &self.model {
            cfg.model = m.parse().map_err(|e: stppp_core::Error| CliError::usage(e.to_string()))?;
        }
        if let Some(o) = &self.objective {
            cfg.objective = o.parse().map_err(|e: stppp_core::Error| CliError::usage(e.to_string()))?;
        }
        if let Some(n) = self.packet_size {
            cfg.packet_size = n;
        }
        if let Some(p) = self.pad {
            cfg.pad = p;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(p) = &self.prior {
            cfg.prior = parse_prior(p)?;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if self.no_warm_start {
            cfg.warm_start = false;
        }
        if let Some(w) = self.width {
            cfg.width = w;
        }
        if let Some(h) = self.height {
            cfg.height = h;
        }
        if cfg.packet_size < 2 {
            return Err(CliError::usage("packet size must be at least 2"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Directory with events.txt and calib.txt.
    #[arg(long)]
    dataset: PathBuf,
    /// Estimates CSV (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Write smoothed per-packet images of warped events here as 16-bit PGM.
    #[arg(long)]
    render_dir: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// `METHOD=PATH` of an estimates CSV; repeat for several methods.
    #[arg(long = "estimates", required = true)]
    estimates: Vec<String>,
    /// Dataset directory holding imu.txt and/or groundtruth.txt.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// IMU file (overrides the dataset's).
    #[arg(long)]
    imu: Option<PathBuf>,
    /// Pose file (overrides the dataset's).
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    /// Sequence name in the metrics table (default: dataset directory name).
    #[arg(long)]
    sequence: Option<String>,
    /// IMU time offset; ground truth is read at `t - lag`.
    #[arg(long)]
    imu_lag_ms: Option<f64>,
    /// Frame of ground-truth linear velocity: camera or world.
    #[arg(long)]
    gt_frame: Option<String>,
    /// Metrics CSV (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitPriorArgs {
    /// Fit to the first packet of this dataset.
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    dataset: Option<PathBuf>,
    /// Fit to whitespace-separated per-pixel counts.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// prior.json (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, short)]
    output: PathBuf,
    /// JSON scene and trajectory description.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scene points.
    #[arg(long)]
    points: Option<usize>,
    /// Lower bound of per-point event rates, events/s.
    #[arg(long)]
    rate_min: Option<f64>,
    /// Upper bound of per-point event rates, events/s.
    #[arg(long)]
    rate_max: Option<f64>,
    /// Full angle of the cone holding scene points, degrees.
    #[arg(long)]
    fov_deg: Option<f64>,
    /// Replace the trajectory by one segment of this model...
    #[arg(long, requires = "params")]
    model: Option<String>,
    /// ...with these comma-separated parameters (rad/s, rad/s^2 or 1/s)...
    #[arg(long, requires = "model")]
    params: Option<String>,
    /// ...lasting this many seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Use events from this dataset instead of a synthetic scene.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated packet sizes.
    #[arg(long, default_value = "10000,20000,40000,80000")]
    sizes: String,
    /// Comma-separated objectives.
    #[arg(long, default_value = "nb,cmax")]
    objectives: String,
    /// Timed evaluations per (objective, size).
    #[arg(long, default_value_t = 30)]
    reps: usize,
    /// Seed of the synthetic scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run each evaluation on the calling thread only.
    #[arg(long)]
    sequential: bool,
    /// Timing CSV (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure thread pool: {e}")))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Align(a) => commands::align(&a.dataset, a.output.as_deref(), a.render_dir.as_deref(), &a.run.resolve()?),
        Command::Eval(a) => commands::eval(&a),
        Command::FitPrior(a) => {
            commands::fit_prior(a.dataset.as_deref(), a.counts.as_deref(), a.output.as_deref(), &a.run.resolve()?)
        }
        Command::Synth(a) => commands::synth(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
