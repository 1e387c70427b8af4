//! `plan` subcommand: solve one hand-specified instance and emit its trace.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use somtp::cbf::{Obstacle, ProblemInstance};
use somtp::eval::{evaluate_plan, DEFAULT_INFEASIBILITY_TOL};
use somtp::files::write_atomic;
use somtp::policy::{encode_instance, load_checkpoint};
use somtp::slpg::{apply_correction, CorrectionMode, Dc3Config, SlpgConfig};
use somtp::solver::{solve, SolverConfig};
use somtp::vehicle::{rollout, ControlSequence, PlannerConfig, State};

use crate::{parse_correction, parse_triple, push_comment};

/// Arguments for `somtp plan`.
#[derive(Args)]
pub struct PlanArgs {
    /// Goal pose as `x,y,yaw` in the robot frame.
    #[arg(long, value_parser = parse_triple)]
    pub goal: [f64; 3],
    /// Obstacle as `x,y,radius`; repeat for more obstacles.
    #[arg(long = "obstacle", value_parser = parse_triple)]
    pub obstacles: Vec<[f64; 3]>,
    /// Checkpoint to plan with; omit to use the reference solver.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Safety correction applied to network plans: slpg, dc3, or none.
    #[arg(long, default_value = "slpg", value_parser = parse_correction)]
    pub correction: CorrectionMode,
    /// Planning horizon (must match the checkpoint's when --model is given).
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    /// Random restarts for the solver.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Trace CSV output path; omit to print the trace to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: PlanArgs) -> somtp::Result<()> {
    let cfg = PlannerConfig { horizon: args.horizon, ..PlannerConfig::default() };
    cfg.validate()?;
    let instance = ProblemInstance {
        goal: State { x: args.goal[0], y: args.goal[1], yaw: args.goal[2] },
        obstacles: args
            .obstacles
            .iter()
            .map(|&[x, y, radius]| Obstacle { x, y, radius })
            .collect(),
    };

    let (plan, planner_label) = if let Some(model) = &args.model {
        let net = load_checkpoint(model, &cfg)?;
        let encoded = encode_instance(&instance);
        if encoded.len() != net.config().input_dim {
            return Err(somtp::Error::ShapeMismatch {
                context: "checkpoint input layer vs obstacle count",
                expected: net.config().input_dim,
                got: encoded.len(),
            });
        }
        let raw = net.forward(&encoded, &cfg)?;
        let corrected = apply_correction(
            &raw,
            &instance.obstacles,
            &cfg,
            args.correction,
            &SlpgConfig::default(),
            &Dc3Config::default(),
        );
        (corrected, format!("network ({})", model.display()))
    } else {
        let solver = SolverConfig { restarts: args.restarts, ..SolverConfig::default() };
        let result = solve(&instance, &cfg, &solver);
        (result.plan, "solver".to_string())
    };

    let metrics = evaluate_plan(0, &plan, &instance, &cfg, DEFAULT_INFEASIBILITY_TOL);
    let metrics_json =
        serde_json::to_string(&metrics).map_err(|err| somtp::Error::config(err.to_string()))?;

    let mut out = crate::csv_header("trace", &cfg)?;
    push_comment(&mut out, "planner", &planner_label);
    push_comment(&mut out, "columns", "step,x,y,yaw,v,steer");
    write_trace(&mut out, &plan, &cfg);
    push_comment(&mut out, "summary", &metrics_json);

    match &args.out {
        Some(path) => {
            write_atomic(path, out.as_bytes())?;
            println!(
                "planned with {}: objective {:.4}, max violation {:.6}",
                planner_label, metrics.objective, metrics.violation_max
            );
            println!("trace in {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

/// Appends trace rows: one per step with its control, then the final state.
pub fn write_trace(out: &mut String, plan: &ControlSequence, cfg: &PlannerConfig) {
    let trajectory = rollout(&State::origin(), plan, cfg);
    for (step, state) in trajectory.states.iter().enumerate() {
        match plan.controls.get(step) {
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
}
