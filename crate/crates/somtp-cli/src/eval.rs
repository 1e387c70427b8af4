//! `eval` subcommand: score open-loop plans on a dataset split.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use somtp::cbf::ProblemInstance;
use somtp::dataset::load_dataset;
use somtp::eval::{evaluate_plan, median_of_three, summarize, DEFAULT_INFEASIBILITY_TOL};
use somtp::files::write_atomic;
use somtp::policy::load_checkpoint;
use somtp::slpg::{apply_correction, CorrectionMode, Dc3Config, SlpgConfig};
use somtp::solver::{batch_solve, SolverConfig};
use somtp::vehicle::ControlSequence;

use crate::{apply_limit, parse_correction, push_comment, split_indices, timing_path, write_timing, SplitArg};

/// Arguments for `somtp eval`.
#[derive(Args)]
pub struct EvalArgs {
    /// Dataset to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate; omit to evaluate the reference solver.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Safety correction applied to network plans: slpg, dc3, or none.
    #[arg(long, default_value = "slpg", value_parser = parse_correction)]
    pub correction: CorrectionMode,
    /// Which split of the dataset to evaluate.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Evaluate only the first K instances of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Worst violation above which a plan counts as infeasible.
    #[arg(long, default_value_t = DEFAULT_INFEASIBILITY_TOL)]
    pub tol: f64,
    /// Per-instance metrics CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Random restarts when evaluating the solver.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Measure planning wall-clock time (median of three passes) into `<out>.timing.csv`.
    #[arg(long)]
    pub time: bool,
}

pub fn run(args: EvalArgs) -> somtp::Result<()> {
    let file = load_dataset(&args.data)?;
    let indices = apply_limit(split_indices(&file, args.split), args.limit);
    let instances: Vec<ProblemInstance> =
        indices.iter().map(|&i| file.instances[i].clone()).collect();
    let cfg = &file.planner_config;

    let planner_label;
    let mut plan_pass: Box<dyn FnMut() -> Vec<ControlSequence>> = if let Some(model) = &args.model {
        let net = load_checkpoint(model, cfg)?;
        for inst in &instances {
            let encoded = 3 + 3 * inst.obstacles.len();
            if encoded != net.config().input_dim {
                return Err(somtp::Error::ShapeMismatch {
                    context: "checkpoint input layer vs dataset obstacles",
                    expected: net.config().input_dim,
                    got: encoded,
                });
            }
        }
        planner_label = format!("network ({})", model.display());
        let slpg = SlpgConfig::default();
        let dc3 = Dc3Config::default();
        let cfg = cfg.clone();
        let correction = args.correction;
        let instances = instances.clone();
        Box::new(move || {
            let raw = net.forward_instances(&instances, &cfg).expect("validated shapes");
            raw.iter()
                .zip(&instances)
                .map(|(u, inst)| apply_correction(u, &inst.obstacles, &cfg, correction, &slpg, &dc3))
                .collect()
        })
    } else {
        planner_label = "solver".to_string();
        let solver = SolverConfig { restarts: args.restarts, ..SolverConfig::default() };
        let instances = instances.clone();
        let cfg = cfg.clone();
        Box::new(move || {
            batch_solve(&instances, &cfg, &solver).into_iter().map(|r| r.plan).collect()
        })
    };

    let (plans, seconds) = if args.time {
        median_of_three(&mut plan_pass)
    } else {
        (plan_pass(), 0.0)
    };

    let metrics: Vec<_> = indices
        .iter()
        .zip(&instances)
        .zip(&plans)
        .map(|((&id, inst), plan)| evaluate_plan(id, plan, inst, cfg, args.tol))
        .collect();
    let summary = summarize(&metrics);
    let summary_json =
        serde_json::to_string(&summary).map_err(|err| somtp::Error::config(err.to_string()))?;

    let mut out = crate::csv_header("eval", cfg)?;
    push_comment(&mut out, "planner", &planner_label);
    if args.model.is_some() {
        push_comment(&mut out, "correction", args.correction);
    }
    push_comment(&mut out, "tol", args.tol);
    push_comment(&mut out, "columns", "id,objective,violation_sum,violation_max,infeasible");
    for m in &metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.id,
            m.objective,
            m.violation_sum,
            m.violation_max,
            u8::from(m.infeasible)
        );
    }
    push_comment(&mut out, "summary", &summary_json);
    write_atomic(&args.out, out.as_bytes())?;

    println!(
        "evaluated {} with {} instances: mean objective {:.4}, infeasible {:.2}%",
        planner_label, summary.instances, summary.mean_objective, summary.infeasible_percent
    );
    println!("metrics in {}", args.out.display());
    if args.time {
        let sidecar = timing_path(&args.out);
        let per_instance = if instances.is_empty() { 0.0 } else { seconds / instances.len() as f64 };
        write_timing(&sidecar, &[("plan_total", seconds), ("plan_per_instance", per_instance)])?;
        println!("timing in {}", sidecar.display());
    }
    Ok(())
}
