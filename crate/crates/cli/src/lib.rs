//! Command-line front end for the `tpgmm` library: train, augment,
//! reproduce, evaluate, batch-simulate, and generate datasets.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 unreadable or malformed data,
//! 4 numeric failure. Every failure prints a single-line diagnostic to
//! stderr. Log verbosity is controlled by the `RUST_LOG` environment
//! variable.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tpgmm::augment::{Method, Selection};
use tpgmm::metrics::CostMode;
use tpgmm::tpgmm::Mode;
use tpgmm::Error;

mod commands;
mod simulate;
mod svg;

#[derive(Parser)]
#[command(
    name = "tpgmm",
    version,
    about = "Learn task-parameterized Gaussian mixture motion models from demonstrations \
             and improve them with synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a demonstration dataset
    Train(TrainArgs),
    /// Grow the training set with synthetic demonstrations while the cost improves
    Augment(AugmentArgs),
    /// Generate a trajectory for a situation with a trained model
    Reproduce(ReproduceArgs),
    /// Report the reproduction cost of a model on a dataset
    Eval(EvalArgs),
    /// Run seeded end-to-end 2D experiments; emit cost tables and a plot
    Simulate(SimulateArgs),
    /// Generate a scripted planar reach-task dataset
    Gen2d(Gen2dArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Noise,
    Rf,
    #[value(alias = "rf_noise")]
    RfNoise,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Noise => Method::Noise,
            MethodArg::Rf => Method::Rf,
            MethodArg::RfNoise => Method::RfNoise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectionArg {
    Original,
    Generalization,
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Original => Selection::Original,
            SelectionArg::Generalization => Selection::Generalization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostArg {
    Rms,
    Dtw,
}

impl From<CostArg> for CostMode {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Rms => CostMode::Rms,
            CostArg::Dtw => CostMode::Dtw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    #[value(name = "time_based", alias = "time-based")]
    TimeBased,
    #[value(name = "trajectory_based", alias = "trajectory-based")]
    TrajectoryBased,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TimeBased => Mode::TimeBased,
            ModeArg::TrajectoryBased => Mode::TrajectoryBased,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Demonstration dataset (JSON)
    #[arg(long)]
    data: PathBuf,
    /// Number of mixture components
    #[arg(long)]
    components: usize,
    /// Expected dataset mode; errors if the file disagrees
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model path (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Expert demonstration dataset (JSON)
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset for generalization selection
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Cap on the total number of demonstrations
    #[arg(long, default_value_t = 8)]
    max_demos: usize,
    /// Cap on candidate iterations
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Signal-to-noise ratio of injected noise, in decibels
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long, value_enum, default_value_t = SelectionArg::Original)]
    selection: SelectionArg,
    #[arg(long)]
    components: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Widening of the sampled pose bounds, as a fraction of the observed range
    #[arg(long, default_value_t = 0.25)]
    expansion: f64,
    /// Output model path (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Run log output (JSON lines)
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Trained model (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Situation file (JSON)
    #[arg(long)]
    situation: PathBuf,
    /// Comma-separated time grid (time-based models)
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    times: Option<Vec<f64>>,
    /// Uniform time grid over [0, 1] with this many samples (time-based models)
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated start point (trajectory-based models)
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Number of integration steps (trajectory-based models)
    #[arg(long)]
    steps: Option<usize>,
    /// Output trajectory path (CSV)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Demonstration dataset (JSON)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    cost: CostArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Independent seeded experiments per method/selection combination
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Restrict to one synthesis method (default: all three)
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Restrict to one selection criterion (default: both)
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    #[arg(long, default_value_t = 3)]
    train_situations: usize,
    #[arg(long, default_value_t = 3)]
    validation_situations: usize,
    /// Samples per demonstration
    #[arg(long, default_value_t = 40)]
    samples: usize,
    #[arg(long, default_value_t = 8)]
    components: usize,
    #[arg(long, default_value_t = 8)]
    max_demos: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// Widening of the sampled pose bounds, as a fraction of the observed range
    #[arg(long, default_value_t = 0.25)]
    expansion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for tables and the plot
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Gen2dArgs {
    #[arg(long, default_value_t = 6)]
    situations: usize,
    /// Samples per demonstration
    #[arg(long, default_value_t = 40)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON)
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Dimension { .. } => 2,
        Error::Parse(_) | Error::Version { .. } | Error::InvalidFrame(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

/// Parse and run one invocation, writing normal output to `out`.
/// Returns the process exit code.
pub fn run_with<I, T, W>(argv: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version go to stdout with code 0; usage errors to stderr with code 2
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train(&args, out),
        Command::Augment(args) => commands::augment(&args, out),
        Command::Reproduce(args) => commands::reproduce(&args, out),
        Command::Eval(args) => commands::eval(&args, out),
        Command::Simulate(args) => simulate::simulate(&args, out),
        Command::Gen2d(args) => commands::gen2d(&args, out),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// [`run_with`] against the process's stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout())
}
