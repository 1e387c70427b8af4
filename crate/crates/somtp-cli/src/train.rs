//! `train` subcommand: fit a policy network on a dataset.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use somtp::dataset::{load_dataset, load_targets};
use somtp::eval::time_seconds;
use somtp::files::write_atomic;
use somtp::policy::{save_checkpoint, NetworkConfig, PolicyNetwork};
use somtp::training::{train, OptimizerKind, TrainConfig, TrainMethod, TrainReport};
use somtp::vehicle::PlannerConfig;

use crate::{parse_method, parse_optimizer, push_comment, timing_path, write_timing, SplitArg};

/// Arguments for `somtp train`.
#[derive(Args)]
pub struct TrainArgs {
    /// Dataset to train on (its train split, by the file's own ratio).
    #[arg(long)]
    pub data: PathBuf,
    /// Trainer: somtp, somtp-no-guide, alm-only, penalty, dc3, mse, or mae.
    #[arg(long, default_value = "somtp", value_parser = parse_method)]
    pub method: TrainMethod,
    /// Passes over the training split.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Instances per gradient step.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Step size of the parameter updates.
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Seed for initialization, shuffling, and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter-update rule: sgd or adam.
    #[arg(long, default_value = "sgd", value_parser = parse_optimizer)]
    pub optimizer: OptimizerKind,
    /// Fixed violation weight of the penalty and DC3 losses.
    #[arg(long, default_value_t = 10.0)]
    pub penalty_weight: f64,
    /// Hidden layers in the policy network.
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    /// Width of each hidden layer.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Dropout probability inside the CO-layers.
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Reference plans (required by the supervised methods mse and mae).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV output path.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Measure total training wall-clock time into `<out>.timing.csv`.
    #[arg(long)]
    pub time: bool,
}

pub fn run(args: TrainArgs) -> somtp::Result<()> {
    let file = load_dataset(&args.data)?;
    let train_indices = crate::split_indices(&file, SplitArg::Train);
    let tcfg = TrainConfig {
        method: args.method,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        optimizer: args.optimizer,
        penalty_weight: args.penalty_weight,
        ..TrainConfig::default()
    };

    let (instances, targets) = select_training_set(&file, &train_indices, &args, &tcfg)?;
    let network = NetworkConfig {
        hidden_layers: args.layers,
        hidden_dim: args.hidden,
        dropout: args.dropout,
        ..NetworkConfig::for_problem(file.planner_config.horizon, file.dataset_config.n_obstacles)
    };
    let mut net = PolicyNetwork::init(network, args.seed)?;

    let mut run_training =
        || train(&mut net, &instances, targets.as_deref(), &file.planner_config, &tcfg);
    let (report, seconds) = if args.time {
        time_seconds(run_training)
    } else {
        (run_training(), 0.0)
    };
    let report = report?;

    save_checkpoint(&args.out, &net, &file.planner_config)?;
    if let Some(history) = &args.history {
        write_history(history, &report, &tcfg, &file.planner_config)?;
    }
    match report.epochs.last() {
        Some(last) => println!(
            "trained {} for {} epochs on {} instances: loss {:.6}, mean violation {:.6}",
            report.method,
            report.epochs.len(),
            instances.len(),
            last.loss,
            last.mean_violation
        ),
        None => println!("trained {} for 0 epochs on {} instances", report.method, instances.len()),
    }
    println!("checkpoint in {}", args.out.display());
    if args.time {
        let sidecar = timing_path(&args.out);
        write_timing(&sidecar, &[("train_total", seconds)])?;
        println!("timing in {}", sidecar.display());
    }
    Ok(())
}

/// Picks the training instances and, for supervised methods, their reference
/// plans; instances whose reference solve did not converge are dropped.
fn select_training_set(
    file: &somtp::dataset::DatasetFile,
    train_indices: &[usize],
    args: &TrainArgs,
    tcfg: &TrainConfig,
) -> somtp::Result<(Vec<somtp::cbf::ProblemInstance>, Option<Vec<Vec<f64>>>)> {
    if !tcfg.method.needs_targets() {
        let instances = train_indices.iter().map(|&i| file.instances[i].clone()).collect();
        return Ok((instances, None));
    }
    let Some(path) = &args.targets else {
        return Err(somtp::Error::config(format!(
            "method {} needs reference plans; pass --targets",
            tcfg.method
        )));
    };
    let rows = load_targets(path)?;
    let by_id: HashMap<usize, &somtp::dataset::TargetRow> =
        rows.iter().map(|row| (row.id, row)).collect();
    let mut instances = Vec::new();
    let mut targets = Vec::new();
    for &i in train_indices {
        match by_id.get(&i) {
            Some(row) if row.converged => {
                instances.push(file.instances[i].clone());
                targets.push(row.u.clone());
            }
            _ => {}
        }
    }
    if instances.is_empty() {
        return Err(somtp::Error::config(
            "no converged reference plans cover the training split",
        ));
    }
    Ok((instances, Some(targets)))
}

/// Writes the per-epoch history CSV next to the checkpoint.
fn write_history(
    path: &std::path::Path,
    report: &TrainReport,
    tcfg: &TrainConfig,
    cfg: &PlannerConfig,
) -> somtp::Result<()> {
    let mut out = crate::csv_header("history", cfg)?;
    let train_json =
        serde_json::to_string(tcfg).map_err(|err| somtp::Error::config(err.to_string()))?;
    push_comment(&mut out, "train_config", train_json);
    push_comment(
        &mut out,
        "columns",
        "epoch,loss,mean_violation,max_violation,mean_correction_sq,mu_cbf,mu_guide",
    );
    for row in &report.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.epoch,
            row.loss,
            row.mean_violation,
            row.max_violation,
            row.mean_correction_sq,
            row.mu_cbf,
            row.mu_guide
        );
    }
    write_atomic(path, out.as_bytes())
}
