//! Plan-quality metrics, their aggregation, and the timing protocol.

use serde::Serialize;

use crate::cbf::{all_residuals, violation_stats, ProblemInstance};
use crate::objective::objective_value;
use crate::vehicle::{rollout, ControlSequence, PlannerConfig, State};

/// Worst-violation threshold above which a plan counts as infeasible.
pub const DEFAULT_INFEASIBILITY_TOL: f64 = 1e-3;

/// Quality metrics of one plan on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceMetrics {
    /// Index of the instance in its dataset.
    pub id: usize,
    /// Tracking objective of the plan.
    pub objective: f64,
    /// Sum of rectified barrier residuals over all steps and obstacles.
    pub violation_sum: f64,
    /// Worst rectified barrier residual.
    pub violation_max: f64,
    /// Whether the worst violation exceeds the feasibility threshold.
    pub infeasible: bool,
}

/// Evaluates a plan against its instance.
pub fn evaluate_plan(
    id: usize,
    u: &ControlSequence,
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
    tol: f64,
) -> InstanceMetrics {
    let objective = objective_value(u, &instance.goal, cfg);
    let trajectory = rollout(&State::origin(), u, cfg);
    let residuals = all_residuals(&trajectory, &instance.obstacles, cfg);
    let (violation_sum, violation_max) = violation_stats(&residuals);
    InstanceMetrics { id, objective, violation_sum, violation_max, infeasible: violation_max > tol }
}

/// Evaluates aligned plans against their instances (ids are positional).
pub fn evaluate_plans(
    plans: &[ControlSequence],
    instances: &[ProblemInstance],
    cfg: &PlannerConfig,
    tol: f64,
) -> Vec<InstanceMetrics> {
    debug_assert_eq!(plans.len(), instances.len());
    plans
        .iter()
        .zip(instances.iter())
        .enumerate()
        .map(|(id, (u, instance))| evaluate_plan(id, u, instance, cfg, tol))
        .collect()
}

/// Aggregate of a set of per-instance metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Number of instances evaluated.
    pub instances: usize,
    /// Mean tracking objective.
    pub mean_objective: f64,
    /// Mean per-instance violation sum.
    pub mean_violation_sum: f64,
    /// Worst violation over all instances.
    pub max_violation: f64,
    /// Share of infeasible plans, in percent.
    pub infeasible_percent: f64,
}

/// Aggregates per-instance metrics.
pub fn summarize(metrics: &[InstanceMetrics]) -> EvalSummary {
    if metrics.is_empty() {
        return EvalSummary {
            instances: 0,
            mean_objective: 0.0,
            mean_violation_sum: 0.0,
            max_violation: 0.0,
            infeasible_percent: 0.0,
        };
    }
    let n = metrics.len() as f64;
    EvalSummary {
        instances: metrics.len(),
        mean_objective: metrics.iter().map(|m| m.objective).sum::<f64>() / n,
        mean_violation_sum: metrics.iter().map(|m| m.violation_sum).sum::<f64>() / n,
        max_violation: metrics.iter().map(|m| m.violation_max).fold(0.0, f64::max),
        infeasible_percent: 100.0 * metrics.iter().filter(|m| m.infeasible).count() as f64 / n,
    }
}

/// Wall-clock seconds spent in `f` (zero on targets without a clock).
pub fn time_seconds<T>(f: impl FnOnce() -> T) -> (T, f64) {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let t0 = std::time::Instant::now();
        let out = f();
        (out, t0.elapsed().as_secs_f64())
    }
    #[cfg(target_arch = "wasm32")]
    {
        (f(), 0.0)
    }
}

/// Runs `f` three times and reports the median wall-clock seconds together
/// with the last result — the protocol behind every reported timing.
pub fn median_of_three<T>(mut f: impl FnMut() -> T) -> (T, f64) {
    let (_, t0) = time_seconds(&mut f);
    let (_, t1) = time_seconds(&mut f);
    let (out, t2) = time_seconds(&mut f);
    let mut times = [t0, t1, t2];
    times.sort_by(f64::total_cmp);
    (out, times[1])
}
