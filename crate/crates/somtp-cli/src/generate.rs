//! `generate` subcommand: sample datasets and closed-loop task suites.

use std::path::PathBuf;

use clap::Args;
use somtp::dataset::{generate, save_dataset, DatasetConfig, DatasetFile};
use somtp::sim::{sample_tasks, save_tasks, TaskFile};
use somtp::vehicle::PlannerConfig;

/// Arguments for `somtp generate`.
#[derive(Args)]
pub struct GenerateArgs {
    /// Number of instances (or tasks) to sample.
    #[arg(long)]
    pub count: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (line-delimited JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Obstacles per instance.
    #[arg(long, default_value_t = 3)]
    pub obstacles: usize,
    /// Planning horizon stored with the file.
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    /// Half side length of the sampling square [m].
    #[arg(long, default_value_t = 3.0)]
    pub half_extent: f64,
    /// Largest obstacle radius [m].
    #[arg(long, default_value_t = 0.5)]
    pub radius_max: f64,
    /// Sample a closed-loop task suite instead of a planning dataset.
    #[arg(long)]
    pub tasks: bool,
}

pub fn run(args: GenerateArgs) -> somtp::Result<()> {
    let planner = PlannerConfig { horizon: args.horizon, ..PlannerConfig::default() };
    let dataset = DatasetConfig {
        n_obstacles: args.obstacles,
        half_extent: args.half_extent,
        radius_max: args.radius_max,
        ..DatasetConfig::default()
    };
    if args.tasks {
        let tasks = sample_tasks(args.count, args.seed, &dataset, &planner)?;
        let file = TaskFile {
            seed: args.seed,
            dataset_config: dataset,
            planner_config: planner,
            tasks,
        };
        save_tasks(&args.out, &file)?;
        println!("wrote {} tasks to {}", file.tasks.len(), args.out.display());
    } else {
        let instances = generate(args.count, args.seed, &dataset, &planner)?;
        let file = DatasetFile {
            seed: args.seed,
            dataset_config: dataset,
            planner_config: planner,
            instances,
        };
        save_dataset(&args.out, &file)?;
        println!("wrote {} instances to {}", file.instances.len(), args.out.display());
    }
    Ok(())
}
