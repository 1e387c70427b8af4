//! `targets` subcommand: solve dataset instances with the reference solver.

use std::path::PathBuf;

use clap::Args;
use somtp::dataset::{load_dataset, save_targets, TargetRow};
use somtp::eval::median_of_three;
use somtp::solver::{batch_solve, SolverConfig};

use crate::{apply_limit, split_indices, timing_path, write_timing, SplitArg};

/// Arguments for `somtp targets`.
#[derive(Args)]
pub struct TargetsArgs {
    /// Dataset to solve.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV of reference plans.
    #[arg(long)]
    pub out: PathBuf,
    /// Which split of the dataset to solve.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Solve only the first K instances of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Random restarts per instance.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Measure wall-clock time (median of three passes) into `<out>.timing.csv`.
    #[arg(long)]
    pub time: bool,
}

pub fn run(args: TargetsArgs) -> somtp::Result<()> {
    let file = load_dataset(&args.data)?;
    let indices = apply_limit(split_indices(&file, args.split), args.limit);
    let instances: Vec<_> = indices.iter().map(|&i| file.instances[i].clone()).collect();
    let solver = SolverConfig { restarts: args.restarts, ..SolverConfig::default() };

    let solve_pass = || batch_solve(&instances, &file.planner_config, &solver);
    let (results, seconds) = if args.time {
        median_of_three(solve_pass)
    } else {
        (solve_pass(), 0.0)
    };

    let rows: Vec<TargetRow> = indices
        .iter()
        .zip(&results)
        .map(|(&id, res)| TargetRow {
            id,
            converged: res.converged,
            objective: res.objective,
            max_violation: res.max_violation,
            u: res.plan.as_flat(),
        })
        .collect();
    save_targets(&args.out, &rows, &file.planner_config)?;

    let solved = rows.iter().filter(|r| r.converged).count();
    println!(
        "solved {}/{} instances to feasibility, targets in {}",
        solved,
        rows.len(),
        args.out.display()
    );
    if args.time {
        let sidecar = timing_path(&args.out);
        let per_instance = if instances.is_empty() { 0.0 } else { seconds / instances.len() as f64 };
        write_timing(&sidecar, &[("solve_total", seconds), ("solve_per_instance", per_instance)])?;
        println!("timing in {}", sidecar.display());
    }
    Ok(())
}
