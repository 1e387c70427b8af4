//! Command-line pipeline for the SOMTP trajectory-planning stack.
//!
//! One binary, six subcommands covering the full workflow: `generate` samples
//! datasets or closed-loop task suites, `targets` solves instances with the
//! reference solver, `train` fits a policy network, `eval` scores open-loop
//! plans, `plan` solves a single hand-specified instance, and `simulate` runs
//! closed-loop episodes.  All file outputs are byte-deterministic for a given
//! input; wall-clock measurements only ever go to separate timing sidecars.

mod eval;
mod generate;
mod plan;
mod simulate;
mod targets;
mod train;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use somtp::dataset::{split, DatasetFile};
use somtp::files::write_atomic;
use somtp::slpg::CorrectionMode;
use somtp::training::{OptimizerKind, TrainMethod};
use somtp::vehicle::PlannerConfig;

/// Self-supervised learning-to-optimize for safe trajectory planning.
#[derive(Parser)]
#[command(name = "somtp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a planning dataset or a closed-loop task suite.
    Generate(generate::GenerateArgs),
    /// Solve dataset instances with the reference solver to produce target plans.
    Targets(targets::TargetsArgs),
    /// Train a policy network on a dataset.
    Train(train::TrainArgs),
    /// Evaluate open-loop plans from a network or the solver on a dataset split.
    Eval(eval::EvalArgs),
    /// Plan a single instance and emit the closed-form trajectory trace.
    Plan(plan::PlanArgs),
    /// Run closed-loop episodes over a task suite.
    Simulate(simulate::SimulateArgs),
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run() -> somtp::Result<()> {
    configure_threads()?;
    match Cli::parse().command {
        Command::Generate(args) => generate::run(args),
        Command::Targets(args) => targets::run(args),
        Command::Train(args) => train::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Plan(args) => plan::run(args),
        Command::Simulate(args) => simulate::run(args),
    }
}

/// Applies the `SOMTP_THREADS` environment variable to the global thread pool.
fn configure_threads() -> somtp::Result<()> {
    let Ok(raw) = std::env::var("SOMTP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| somtp::Error::config(format!("SOMTP_THREADS must be a positive integer, got {raw:?}")))?;
    if threads == 0 {
        return Err(somtp::Error::config("SOMTP_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|err| somtp::Error::config(format!("thread pool setup failed: {err}")))?;
    Ok(())
}

/// Dataset split selector shared by the data-driven subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Training portion of the file's split ratio.
    Train,
    /// Test portion of the file's split ratio.
    Test,
    /// Validation portion of the file's split ratio.
    Val,
    /// Every instance in file order.
    All,
}

/// Resolves a split selector to dataset indices using the file's own ratio and seed.
pub fn split_indices(file: &DatasetFile, which: SplitArg) -> Vec<usize> {
    let n = file.instances.len();
    if which == SplitArg::All {
        return (0..n).collect();
    }
    let (train, test, val) = split(n, file.dataset_config.split_ratio, file.seed);
    match which {
        SplitArg::Train => train,
        SplitArg::Test => test,
        SplitArg::Val => val,
        SplitArg::All => unreachable!(),
    }
}

/// Truncates an index list to the first `limit` entries when a limit is given.
pub fn apply_limit(mut indices: Vec<usize>, limit: Option<usize>) -> Vec<usize> {
    if let Some(limit) = limit {
        indices.truncate(limit);
    }
    indices
}

/// Clap value parser for training methods.
pub fn parse_method(raw: &str) -> somtp::Result<TrainMethod> {
    TrainMethod::from_str(raw)
}

/// Clap value parser for optimizer kinds.
pub fn parse_optimizer(raw: &str) -> somtp::Result<OptimizerKind> {
    OptimizerKind::from_str(raw)
}

/// Clap value parser for safety-correction modes.
pub fn parse_correction(raw: &str) -> somtp::Result<CorrectionMode> {
    CorrectionMode::from_str(raw)
}

/// Starts a commented CSV header: magic line plus the planner configuration echo.
pub fn csv_header(kind: &str, cfg: &PlannerConfig) -> somtp::Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# somtp-{kind} v1");
    let json = serde_json::to_string(cfg).map_err(|err| somtp::Error::config(err.to_string()))?;
    let _ = writeln!(out, "# planner_config: {json}");
    Ok(out)
}

/// Appends one `# key: value` comment line to a CSV buffer.
pub fn push_comment(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "# {key}: {value}");
}

/// Sidecar path for wall-clock measurements: `<out>.timing.csv`.
pub fn timing_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.timing.csv", out.display()))
}

/// Writes labelled wall-clock measurements to a timing sidecar.
pub fn write_timing(path: &Path, rows: &[(&str, f64)]) -> somtp::Result<()> {
    let mut out = String::from("# somtp-timing v1\n# columns: label,seconds\n");
    for (label, seconds) in rows {
        let _ = writeln!(out, "{label},{seconds}");
    }
    write_atomic(path, out.as_bytes())
}

/// Parses a comma-separated pose triple `x,y,yaw`.
pub fn parse_triple(raw: &str) -> somtp::Result<[f64; 3]> {
    let fields: Vec<&str> = raw.split(',').collect();
    if fields.len() != 3 {
        return Err(somtp::Error::config(format!("expected three comma-separated values, got {raw:?}")));
    }
    let mut values = [0.0; 3];
    for (slot, field) in values.iter_mut().zip(&fields) {
        *slot = field
            .trim()
            .parse()
            .map_err(|_| somtp::Error::config(format!("invalid number {field:?} in {raw:?}")))?;
    }
    Ok(values)
}
