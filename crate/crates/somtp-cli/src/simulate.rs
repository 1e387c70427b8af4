//! `simulate` subcommand: run closed-loop episodes over a task suite.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use somtp::eval::median_of_three;
use somtp::files::write_atomic;
use somtp::policy::load_checkpoint;
use somtp::sim::{load_tasks, run_task, score, EpisodeResult, NetworkPlanner, Planner, SolverPlanner, Task};
use somtp::slpg::CorrectionMode;
use somtp::solver::SolverConfig;
use somtp::vehicle::PlannerConfig;

use crate::{parse_correction, push_comment, timing_path, write_timing};

/// Arguments for `somtp simulate`.
#[derive(Args)]
pub struct SimulateArgs {
    /// Task suite to run.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Checkpoint for the network planner; omit to use the reference solver.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Safety correction applied to network plans: slpg, dc3, or none.
    #[arg(long, default_value = "slpg", value_parser = parse_correction)]
    pub correction: CorrectionMode,
    /// Episode summary CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-episode trace CSVs (created if missing).
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Run only the first K tasks.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Random restarts for the solver planner.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Measure episode wall-clock time (median of three passes) into `<out>.timing.csv`.
    #[arg(long)]
    pub time: bool,
}

pub fn run(args: SimulateArgs) -> somtp::Result<()> {
    let file = load_tasks(&args.tasks)?;
    let mut tasks = file.tasks;
    if let Some(limit) = args.limit {
        tasks.truncate(limit);
    }
    let cfg = file.planner_config;

    let mut planner: Box<dyn Planner> = if let Some(model) = &args.model {
        let net = load_checkpoint(model, &cfg)?;
        for task in &tasks {
            let encoded = 3 + 3 * task.obstacles.len();
            if encoded != net.config().input_dim {
                return Err(somtp::Error::ShapeMismatch {
                    context: "checkpoint input layer vs task obstacles",
                    expected: net.config().input_dim,
                    got: encoded,
                });
            }
        }
        let mut planner = NetworkPlanner::new(net, cfg.clone());
        planner.correction = args.correction;
        Box::new(planner)
    } else {
        let solver = SolverConfig { restarts: args.restarts, ..SolverConfig::default() };
        Box::new(SolverPlanner::new(cfg.clone(), solver))
    };
    let planner_label = match &args.model {
        Some(model) => format!("network ({})", model.display()),
        None => "solver".to_string(),
    };

    let mut episode_pass = || -> somtp::Result<Vec<EpisodeResult>> {
        tasks.iter().map(|task| run_task(planner.as_mut(), task, &cfg)).collect()
    };
    let (results, seconds) = if args.time {
        median_of_three(&mut episode_pass)
    } else {
        (episode_pass(), 0.0)
    };
    let results = results?;
    let suite_score = score(&results);
    let score_json =
        serde_json::to_string(&suite_score).map_err(|err| somtp::Error::config(err.to_string()))?;

    let mut out = crate::csv_header("episodes", &cfg)?;
    push_comment(&mut out, "planner", &planner_label);
    if args.model.is_some() {
        push_comment(&mut out, "correction", args.correction);
    }
    push_comment(&mut out, "columns", "id,success,steps,final_distance");
    for (id, result) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            id,
            u8::from(result.success),
            result.controls.len(),
            result.final_distance
        );
    }
    push_comment(&mut out, "summary", &score_json);
    write_atomic(&args.out, out.as_bytes())?;

    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir)
            .map_err(|err| somtp::Error::io(dir.display().to_string(), err))?;
        for (id, (task, result)) in tasks.iter().zip(&results).enumerate() {
            write_episode_trace(&dir.join(format!("episode_{id}.csv")), task, result, &cfg)?;
        }
    }

    println!(
        "simulated {} episodes with {}: success {:.1}%, mean final distance {:.4}",
        suite_score.episodes, planner_label, suite_score.success_percent, suite_score.mean_final_distance
    );
    println!("episodes in {}", args.out.display());
    if args.time {
        let sidecar = timing_path(&args.out);
        let per_episode = if tasks.is_empty() { 0.0 } else { seconds / tasks.len() as f64 };
        write_timing(&sidecar, &[("episodes_total", seconds), ("episodes_per_episode", per_episode)])?;
        println!("timing in {}", sidecar.display());
    }
    Ok(())
}

/// Writes one episode's world-frame trace: visited poses with applied controls.
fn write_episode_trace(
    path: &std::path::Path,
    task: &Task,
    result: &EpisodeResult,
    cfg: &PlannerConfig,
) -> somtp::Result<()> {
    let mut out = crate::csv_header("trace", cfg)?;
    push_comment(&mut out, "start", format!("{},{},{}", task.start.x, task.start.y, task.start.yaw));
    push_comment(&mut out, "goal", format!("{},{},{}", task.goal.x, task.goal.y, task.goal.yaw));
    for o in &task.obstacles {
        push_comment(&mut out, "obstacle", format!("{},{},{}", o.x, o.y, o.radius));
    }
    push_comment(&mut out, "success", u8::from(result.success));
    push_comment(&mut out, "columns", "step,x,y,yaw,v,steer");
    for (step, state) in result.states.iter().enumerate() {
        match result.controls.get(step) {
            Some(control) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    step, state.x, state.y, state.yaw, control.v, control.steer
                );
            }
            None => {
                let _ = writeln!(out, "{},{},{},{},,", step, state.x, state.y, state.yaw);
            }
        }
    }
    write_atomic(path, out.as_bytes())
}
