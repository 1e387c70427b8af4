//! Reference augmented-Lagrangian solver for the planning problem.
//!
//! Solves `min J(u) s.t. r(u) ≤ 0, u ∈ box` with a classic PHR augmented
//! Lagrangian: an outer loop updates multipliers and grows the penalty when
//! feasibility stalls, while an inner projected-gradient loop with a
//! backtracking line search minimizes the smooth subproblem over the control
//! box. Several start points are tried and the best feasible result wins.
//! This solver is the training-free oracle the learned planner is measured
//! against; it also powers the model-predictive baseline in closed loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{h_kernel, residual_system_kernel, Obstacle, ProblemInstance};
use crate::objective::{objective_gradient, objective_kernel};
use crate::rng::{stream, STREAM_RESTART};
use crate::vehicle::{rollout_kernel, ControlSequence, PlannerConfig};

/// Parameters of the reference solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Maximum multiplier/penalty updates (default 30).
    pub max_outer: usize,
    /// Maximum projected-gradient steps per subproblem (default 200).
    pub max_inner: usize,
    /// Projected-gradient norm at which a subproblem counts as solved
    /// (default 1e-8).
    pub inner_tol: f64,
    /// Worst residual at which a plan counts as feasible (default 1e-6).
    pub feas_tol: f64,
    /// Initial penalty weight (default 1).
    pub initial_penalty: f64,
    /// Penalty growth factor applied when feasibility stalls (default 4).
    pub penalty_growth: f64,
    /// Penalty ceiling (default 1e8).
    pub penalty_max: f64,
    /// Start points: the zero plan plus `restarts − 1` random box samples
    /// (default 3).
    pub restarts: usize,
    /// Seed for the random start points (default 0).
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer: 30,
            max_inner: 200,
            inner_tol: 1e-8,
            feas_tol: 1e-6,
            initial_penalty: 1.0,
            penalty_growth: 4.0,
            penalty_max: 1e8,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Solution returned by [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Best plan found.
    pub plan: ControlSequence,
    /// Objective value at the plan.
    pub objective: f64,
    /// Worst constraint violation at the plan (0 when feasible).
    pub max_violation: f64,
    /// Whether the plan is feasible at `feas_tol` with a stationary
    /// subproblem; a converged result always has `max_violation ≤ feas_tol`.
    pub converged: bool,
    /// Projected-gradient norm of the final subproblem at the plan.
    pub projected_gradient_norm: f64,
    /// Outer iterations spent on the winning start point.
    pub outer_iterations: usize,
}

/// Solves a planning instance from the standard start points.
pub fn solve(instance: &ProblemInstance, cfg: &PlannerConfig, solver: &SolverConfig) -> SolveResult {
    solve_with_warm_start(instance, None, cfg, solver)
}

/// Solves a planning instance, trying `warm` before the standard starts.
pub fn solve_with_warm_start(
    instance: &ProblemInstance,
    warm: Option<&ControlSequence>,
    cfg: &PlannerConfig,
    solver: &SolverConfig,
) -> SolveResult {
    let dim = 2 * cfg.horizon;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        let mut clamped = w.clone();
        clamped.clamp_to_box(cfg);
        starts.push(clamped.as_flat());
    }
    starts.push(vec![0.0; dim]);
    let mut rng = stream(solver.seed, STREAM_RESTART, &[]);
    for _ in 1..solver.restarts.max(1) {
        let mut point = Vec::with_capacity(dim);
        for i in 0..dim {
            point.push(rng.gen_range(cfg.flat_min(i)..=cfg.flat_max(i)));
        }
        starts.push(point);
    }

    let mut best: Option<SolveResult> = None;
    for start in &starts {
        let candidate = solve_single(start, instance, cfg, solver);
        let better = match &best {
            None => true,
            Some(b) => {
                let cand_feasible = candidate.max_violation <= solver.feas_tol;
                let best_feasible = b.max_violation <= solver.feas_tol;
                match (cand_feasible, best_feasible) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => candidate.objective < b.objective,
                    (false, false) => candidate.max_violation < b.max_violation,
                }
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.expect("at least one start point")
}

/// Solves every instance, preserving order. With the `parallel` feature the
/// instances are distributed over a thread pool; results are identical either
/// way.
pub fn batch_solve(
    instances: &[ProblemInstance],
    cfg: &PlannerConfig,
    solver: &SolverConfig,
) -> Vec<SolveResult> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        instances.par_iter().map(|inst| solve(inst, cfg, solver)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        instances.iter().map(|inst| solve(inst, cfg, solver)).collect()
    }
}

/// One augmented-Lagrangian run from a single start point.
fn solve_single(
    start: &[f64],
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
    solver: &SolverConfig,
) -> SolveResult {
    let dim = start.len();
    let n_rows = cfg.horizon * instance.obstacles.len();
    let mut u = start.to_vec();
    let mut lambda = vec![0.0; n_rows];
    let mut mu = solver.initial_penalty;
    let mut prev_viol = f64::INFINITY;
    let mut pg_norm = f64::INFINITY;
    let mut outer_used = 0;

    for outer in 0..solver.max_outer {
        outer_used = outer + 1;
        pg_norm = minimize_subproblem(&mut u, instance, &lambda, mu, cfg, solver);
        let residuals = residual_values(&u, &instance.obstacles, cfg);
        let viol = residuals.iter().fold(0.0_f64, |m, r| m.max(r.max(0.0)));
        if viol <= solver.feas_tol && pg_norm <= solver.inner_tol {
            break;
        }
        for (l, &r) in lambda.iter_mut().zip(residuals.iter()) {
            *l = (*l + mu * r).max(0.0);
        }
        // Grow the penalty when the violation stopped improving fast enough.
        if viol > 0.25 * prev_viol && viol > solver.feas_tol {
            mu = (mu * solver.penalty_growth).min(solver.penalty_max);
        }
        prev_viol = viol;
        let _ = dim;
    }

    let residuals = residual_values(&u, &instance.obstacles, cfg);
    let max_violation = residuals.iter().fold(0.0_f64, |m, r| m.max(r.max(0.0)));
    let plan = ControlSequence::from_flat(&u).expect("even length");
    let objective = {
        let states = rollout_states(&u, cfg);
        objective_kernel(&states, &u, &instance.goal, cfg)
    };
    SolveResult {
        plan,
        objective,
        max_violation,
        converged: max_violation <= solver.feas_tol && pg_norm <= solver.inner_tol,
        projected_gradient_norm: pg_norm,
        outer_iterations: outer_used,
    }
}

/// Spectral projected-gradient descent on the augmented Lagrangian; returns
/// the projected-gradient norm at the best iterate found.
///
/// Step lengths come from the Barzilai–Borwein quotient, safeguarded by a
/// backtracking search. Sufficient decrease carries a machine-epsilon slack:
/// near stationarity the per-step decrease drops below f64 resolution, and
/// the slack lets the (still contractive) gradient map keep tightening the
/// iterate instead of stalling at the rounding floor.
fn minimize_subproblem(
    u: &mut Vec<f64>,
    instance: &ProblemInstance,
    lambda: &[f64],
    mu: f64,
    cfg: &PlannerConfig,
    solver: &SolverConfig,
) -> f64 {
    let dim = u.len();
    let c1 = 1e-4;
    let mut alpha = 1.0;
    let mut value = phi_value(u, instance, lambda, mu, cfg);
    let mut grad = phi_gradient(u, instance, lambda, mu, cfg);
    let mut best_u: Option<Vec<f64>> = None;
    let mut best_pg = f64::INFINITY;
    for _ in 0..solver.max_inner {
        let pg_norm = projected_gradient_norm(u, &grad, cfg);
        if pg_norm < best_pg {
            best_pg = pg_norm;
            best_u = Some(u.clone());
        }
        if pg_norm <= solver.inner_tol {
            return pg_norm;
        }
        let slack = 4.0 * f64::EPSILON * (1.0 + value.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = vec![0.0; dim];
            let mut displacement_sq = 0.0;
            for i in 0..dim {
                trial[i] = (u[i] - alpha * grad[i]).clamp(cfg.flat_min(i), cfg.flat_max(i));
                let d = trial[i] - u[i];
                displacement_sq += d * d;
            }
            if displacement_sq == 0.0 {
                break;
            }
            let trial_value = phi_value(&trial, instance, lambda, mu, cfg);
            if trial_value <= value - (c1 / alpha) * displacement_sq + slack {
                let new_grad = phi_gradient(&trial, instance, lambda, mu, cfg);
                // Barzilai–Borwein step for the next iteration.
                let mut s_dot_s = 0.0;
                let mut s_dot_y = 0.0;
                for i in 0..dim {
                    let s = trial[i] - u[i];
                    let y = new_grad[i] - grad[i];
                    s_dot_s += s * s;
                    s_dot_y += s * y;
                }
                if s_dot_y > 0.0 {
                    alpha = (s_dot_s / s_dot_y).clamp(1e-12, 1e6);
                }
                *u = trial;
                value = trial_value;
                grad = new_grad;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let final_pg = projected_gradient_norm(u, &grad, cfg);
    if final_pg <= best_pg {
        return final_pg;
    }
    if let Some(best) = best_u {
        *u = best;
    }
    best_pg
}

/// Norm of the projection residual `u − clamp(u − ∇Φ)`.
fn projected_gradient_norm(u: &[f64], grad: &[f64], cfg: &PlannerConfig) -> f64 {
    let mut sq = 0.0;
    for i in 0..u.len() {
        let moved = (u[i] - grad[i]).clamp(cfg.flat_min(i), cfg.flat_max(i));
        let d = u[i] - moved;
        sq += d * d;
    }
    sq.sqrt()
}

fn rollout_states(u: &[f64], cfg: &PlannerConfig) -> Vec<[f64; 3]> {
    rollout_kernel([0.0; 3], u, cfg.dt, cfg.wheelbase)
}

/// Residual values at a flat plan (value-only, no Jacobian).
fn residual_values(u: &[f64], obstacles: &[Obstacle], cfg: &PlannerConfig) -> Vec<f64> {
    let states = rollout_states(u, cfg);
    let n = states.len() - 1;
    let mut out = Vec::with_capacity(n * obstacles.len());
    for k in 0..n {
        for obstacle in obstacles {
            let inflated_sq = obstacle.inflated_radius_sq(cfg);
            let h_k = h_kernel(&states[k], obstacle, inflated_sq);
            let h_next = h_kernel(&states[k + 1], obstacle, inflated_sq);
            out.push(-(h_next - h_k) - cfg.cbf_decay * h_k);
        }
    }
    out
}

/// Augmented-Lagrangian value `J + (μ/2)·Σ[max(0, λ/μ + r)² − (λ/μ)²]`.
fn phi_value(u: &[f64], instance: &ProblemInstance, lambda: &[f64], mu: f64, cfg: &PlannerConfig) -> f64 {
    let states = rollout_states(u, cfg);
    let mut value = objective_kernel(&states, u, &instance.goal, cfg);
    let residuals = {
        let n = states.len() - 1;
        let mut out = Vec::with_capacity(n * instance.obstacles.len());
        for k in 0..n {
            for obstacle in &instance.obstacles {
                let inflated_sq = obstacle.inflated_radius_sq(cfg);
                let h_k = h_kernel(&states[k], obstacle, inflated_sq);
                let h_next = h_kernel(&states[k + 1], obstacle, inflated_sq);
                out.push(-(h_next - h_k) - cfg.cbf_decay * h_k);
            }
        }
        out
    };
    for (&l, &r) in lambda.iter().zip(residuals.iter()) {
        let shifted = (l / mu + r).max(0.0);
        value += 0.5 * mu * (shifted * shifted - (l / mu) * (l / mu));
    }
    value
}

/// Gradient of the augmented Lagrangian.
fn phi_gradient(
    u: &[f64],
    instance: &ProblemInstance,
    lambda: &[f64],
    mu: f64,
    cfg: &PlannerConfig,
) -> Vec<f64> {
    let useq = ControlSequence::from_flat(u).expect("even length");
    let mut grad = objective_gradient(&useq, &instance.goal, cfg);
    let system = residual_system_kernel(u, &instance.obstacles, cfg);
    for (row_idx, row) in system.gradient_rows.iter().enumerate() {
        let weight = (lambda[row_idx] + mu * system.residuals[row_idx]).max(0.0);
        if weight > 0.0 {
            for (g, &gi) in grad.iter_mut().zip(row.iter()) {
                *g += weight * gi;
            }
        }
    }
    grad
}

/// Best feasible plan on a uniform control grid — a brute-force oracle for
/// tiny horizons.
///
/// Every control component independently takes `levels` evenly spaced values
/// across the box, so the search visits `levels^(2N)` plans; keep `N ≤ 2`.
/// Returns `None` when no grid plan is feasible at `feas_tol`.
pub fn exhaustive_best(
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
    levels: usize,
    feas_tol: f64,
) -> Option<(ControlSequence, f64)> {
    assert!(levels >= 2, "need at least two grid levels");
    let dim = 2 * cfg.horizon;
    assert!(dim * (levels as f64).log2() as usize <= 64, "grid too large");
    let axis_value = |i: usize, idx: usize| -> f64 {
        let lo = cfg.flat_min(i);
        let hi = cfg.flat_max(i);
        lo + (hi - lo) * idx as f64 / (levels - 1) as f64
    };
    let total: usize = levels.pow(dim as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut point = vec![0.0; dim];
    for mut code in 0..total {
        for i in 0..dim {
            point[i] = axis_value(i, code % levels);
            code /= levels;
        }
        let residuals = residual_values(&point, &instance.obstacles, cfg);
        let viol = residuals.iter().fold(0.0_f64, |m, r| m.max(r.max(0.0)));
        if viol > feas_tol {
            continue;
        }
        let states = rollout_states(&point, cfg);
        let objective = objective_kernel(&states, &point, &instance.goal, cfg);
        if best.as_ref().is_none_or(|(_, b)| objective < *b) {
            best = Some((point.clone(), objective));
        }
    }
    best.map(|(p, obj)| (ControlSequence::from_flat(&p).expect("even length"), obj))
}
