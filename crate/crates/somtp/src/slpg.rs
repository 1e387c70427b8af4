//! Safety-layer projected-gradient (SLPG) correction, and the fixed-step
//! gradient correction used by the DC3 baseline.
//!
//! SLPG pulls a control plan toward the feasible set of the barrier
//! constraints. Each outer iteration freezes a linearization of the residuals
//! at the current plan and runs a few projected-gradient steps on the
//! correction objective
//! `J_corr(Δu) = Σ‖Δu_k‖²_R + λ_c·Σ ReLU(r + G·Δu)²`,
//! choosing step lengths with a backtracking line search that also respects
//! the control box. The whole procedure is written against [`Real`], so a
//! recorded run yields exact gradients of the corrected plan with respect to
//! the input plan; accepted step lengths are treated as constants.

use serde::{Deserialize, Serialize};

use crate::cbf::{residual_system_kernel, Obstacle, ResidualGradients, ResidualMatrix, ResidualSystem};
use crate::diff::Real;
use crate::vehicle::{ControlSequence, PlannerConfig};

/// Parameters of the SLPG correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlpgConfig {
    /// Outer re-linearization iterations n_m (default 10; training uses 2).
    pub outer_iters: usize,
    /// Projected-gradient steps per linearization i_m (default 2).
    pub inner_iters: usize,
    /// Violation weight λ_c in the correction objective (default 1000).
    pub lambda_c: f64,
    /// Sufficient-decrease constant of the line search (default 1e-4).
    pub armijo_c1: f64,
    /// Backtracking shrink factor (default 0.5).
    pub armijo_shrink: f64,
    /// Maximum line-search trials before accepting the last step (default 10).
    pub armijo_max_iters: usize,
    /// Worst-violation level at which the correction stops early (default 1e-6).
    pub break_tol: f64,
}

impl Default for SlpgConfig {
    fn default() -> Self {
        SlpgConfig {
            outer_iters: 10,
            inner_iters: 2,
            lambda_c: 1000.0,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            armijo_max_iters: 10,
            break_tol: 1e-6,
        }
    }
}

impl SlpgConfig {
    /// SLPG schedule used during training: fewer outer iterations and a
    /// gentler violation weight. The guide multipliers accumulate pressure
    /// against whatever correction the training-time SLPG applies, so a
    /// harsh λ_c here drives the policy toward over-cautious plans that
    /// stall near the goal; the stiff default stays reserved for test time.
    pub fn training() -> Self {
        SlpgConfig { outer_iters: 2, lambda_c: 10.0, ..SlpgConfig::default() }
    }
}

/// Residuals and residual gradients frozen at a base plan.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// Plan the residuals were linearized at.
    pub base: ControlSequence,
    /// Residual values at the base plan.
    pub residuals: ResidualMatrix,
    /// Residual Jacobian at the base plan.
    pub gradients: ResidualGradients,
}

/// Freezes the residuals and their Jacobian at `u`.
pub fn linearize(u: &ControlSequence, obstacles: &[Obstacle], cfg: &PlannerConfig) -> Linearization {
    let flat = u.as_flat();
    let system = residual_system_kernel(&flat, obstacles, cfg);
    let cols = flat.len();
    let residuals = ResidualMatrix::from_values(
        system.horizon,
        system.n_obstacles,
        system.residuals.clone(),
    );
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(system.gradient_rows.len());
    for prefix in &system.gradient_rows {
        let mut row = prefix.clone();
        row.resize(cols, 0.0);
        rows.push(row);
    }
    Linearization {
        base: u.clone(),
        residuals,
        gradients: dense_gradients(rows, cols),
    }
}

fn dense_gradients(rows: Vec<Vec<f64>>, cols: usize) -> ResidualGradients {
    let mut data = Vec::with_capacity(rows.len() * cols);
    let n_rows = rows.len();
    for row in rows {
        data.extend_from_slice(&row);
    }
    ResidualGradients::from_parts(n_rows, cols, data)
}

/// Correction objective at a candidate step `du` under a frozen linearization.
pub fn j_corr(du: &[f64], lin: &Linearization, cfg: &PlannerConfig, slpg: &SlpgConfig) -> f64 {
    let rows: Vec<&[f64]> = (0..lin.gradients.rows()).map(|r| lin.gradients.row(r)).collect();
    jcorr_value(du, lin.residuals.values(), &rows, cfg, slpg.lambda_c)
}

/// Gradient of [`j_corr`] with respect to `du`.
pub fn j_corr_gradient(du: &[f64], lin: &Linearization, cfg: &PlannerConfig, slpg: &SlpgConfig) -> Vec<f64> {
    let mut grad = vec![0.0; du.len()];
    for (i, &d) in du.iter().enumerate() {
        grad[i] = 2.0 * cfg.control_weights[i % 2] * d;
    }
    for r in 0..lin.gradients.rows() {
        let row = lin.gradients.row(r);
        let mut slack = lin.residuals.values()[r];
        for (gi, &d) in row.iter().zip(du.iter()) {
            slack += gi * d;
        }
        if slack > 0.0 {
            let scale = 2.0 * slpg.lambda_c * slack;
            for (g, &gi) in grad.iter_mut().zip(row.iter()) {
                *g += scale * gi;
            }
        }
    }
    grad
}

/// Shared value evaluator over row slices (dense or ragged prefixes).
fn jcorr_value(
    du: &[f64],
    residuals: &[f64],
    gradient_rows: &[&[f64]],
    cfg: &PlannerConfig,
    lambda_c: f64,
) -> f64 {
    let mut value = 0.0;
    for (i, &d) in du.iter().enumerate() {
        value += cfg.control_weights[i % 2] * d * d;
    }
    for (r, row) in gradient_rows.iter().enumerate() {
        let mut slack = residuals[r];
        for (gi, &d) in row.iter().zip(du.iter()) {
            slack += gi * d;
        }
        if slack > 0.0 {
            value += lambda_c * slack * slack;
        }
    }
    value
}

/// Backtracking step-length search along the descent direction `−gradient`.
///
/// Starts at step 1 and halves until the unclamped trial both achieves the
/// sufficient-decrease condition and keeps `base + du` inside the control
/// box; when the trial budget runs out, the last tried step is returned and
/// the caller's clamp restores feasibility.
pub fn armijo_box_search(
    du: &[f64],
    gradient: &[f64],
    lin: &Linearization,
    cfg: &PlannerConfig,
    slpg: &SlpgConfig,
) -> f64 {
    let rows: Vec<&[f64]> = (0..lin.gradients.rows()).map(|r| lin.gradients.row(r)).collect();
    let base = lin.base.as_flat();
    armijo_impl(du, gradient, &base, lin.residuals.values(), &rows, cfg, slpg)
}

fn armijo_impl(
    du: &[f64],
    gradient: &[f64],
    base: &[f64],
    residuals: &[f64],
    gradient_rows: &[&[f64]],
    cfg: &PlannerConfig,
    slpg: &SlpgConfig,
) -> f64 {
    let j0 = jcorr_value(du, residuals, gradient_rows, cfg, slpg.lambda_c);
    let grad_sq: f64 = gradient.iter().map(|g| g * g).sum();
    let mut step = 1.0;
    let mut trial = vec![0.0; du.len()];
    for attempt in 0..slpg.armijo_max_iters {
        for i in 0..du.len() {
            trial[i] = du[i] - step * gradient[i];
        }
        let decreased =
            jcorr_value(&trial, residuals, gradient_rows, cfg, slpg.lambda_c) <= j0 - slpg.armijo_c1 * step * grad_sq;
        let in_box = trial.iter().enumerate().all(|(i, &d)| {
            let u = base[i] + d;
            cfg.flat_min(i) <= u && u <= cfg.flat_max(i)
        });
        if decreased && in_box {
            return step;
        }
        if attempt + 1 < slpg.armijo_max_iters {
            step *= slpg.armijo_shrink;
        }
    }
    step
}

/// Outcome of a correction: the corrected plan and the total adjustment.
#[derive(Debug, Clone)]
pub struct Correction {
    /// Corrected plan `û`.
    pub corrected: ControlSequence,
    /// Total adjustment `û − u` as a flat vector.
    pub delta: Vec<f64>,
    /// Outer iterations actually executed (early break shortens this).
    pub outer_iterations: usize,
}

/// Runs the SLPG correction on a plan.
pub fn correct(
    u: &ControlSequence,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    slpg: &SlpgConfig,
) -> Correction {
    let flat = u.as_flat();
    let (corrected, delta, outer) = correct_kernel(&flat, obstacles, cfg, slpg);
    Correction {
        corrected: ControlSequence::from_flat(&corrected).expect("even length"),
        delta,
        outer_iterations: outer,
    }
}

/// SLPG correction over a flat plan, generic over the scalar type.
///
/// Returns `(û, û − u, outer iterations run)`.
pub fn correct_kernel<R: Real>(
    u_flat: &[R],
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    slpg: &SlpgConfig,
) -> (Vec<R>, Vec<R>, usize) {
    let dim = u_flat.len();
    let zero = u_flat[0].constant_like(0.0);
    let mut current: Vec<R> = u_flat.to_vec();
    let mut outer_used = 0;
    for _ in 0..slpg.outer_iters {
        let system = residual_system_kernel(&current, obstacles, cfg);
        let worst = system
            .residuals
            .iter()
            .fold(0.0_f64, |acc, r| acc.max(r.value()));
        if worst <= slpg.break_tol {
            break;
        }
        outer_used += 1;
        let base_vals: Vec<f64> = current.iter().map(|v| v.value()).collect();
        let mut du: Vec<R> = vec![zero; dim];
        for inner in 0..slpg.inner_iters {
            let grad = jcorr_gradient_kernel(&du, &system, cfg, slpg.lambda_c, inner == 0);
            let step = {
                let du_vals: Vec<f64> = du.iter().map(|v| v.value()).collect();
                let grad_vals: Vec<f64> = grad.iter().map(|v| v.value()).collect();
                let residual_vals: Vec<f64> = system.residuals.iter().map(|v| v.value()).collect();
                let row_vals: Vec<Vec<f64>> = system
                    .gradient_rows
                    .iter()
                    .map(|row| row.iter().map(|v| v.value()).collect())
                    .collect();
                let row_refs: Vec<&[f64]> = row_vals.iter().map(Vec::as_slice).collect();
                armijo_impl(&du_vals, &grad_vals, &base_vals, &residual_vals, &row_refs, cfg, slpg)
            };
            // Project in plan space: clamp(u + Δu) − u keeps û inside the box
            // and routes subgradients through the active clamp faces.
            for i in 0..dim {
                let raw = du[i] - grad[i] * step;
                du[i] = (current[i] + raw).clamp_box(cfg.flat_min(i), cfg.flat_max(i)) - current[i];
            }
        }
        for i in 0..dim {
            current[i] = current[i] + du[i];
        }
    }
    let delta: Vec<R> = current.iter().zip(u_flat.iter()).map(|(c, u)| *c - *u).collect();
    (current, delta, outer_used)
}

/// Gradient of the correction objective under a frozen residual system,
/// generic over the scalar type. `du_is_zero` skips the `G·Δu` products on
/// the first inner step, where `Δu` is identically zero.
fn jcorr_gradient_kernel<R: Real>(
    du: &[R],
    system: &ResidualSystem<R>,
    cfg: &PlannerConfig,
    lambda_c: f64,
    du_is_zero: bool,
) -> Vec<R> {
    let zero = system.residuals.first().map(|r| r.constant_like(0.0));
    let mut grad: Vec<R> = match zero {
        Some(z) => vec![z; du.len()],
        None => du.iter().map(|d| d.constant_like(0.0)).collect(),
    };
    for (i, &d) in du.iter().enumerate() {
        if !du_is_zero {
            grad[i] = grad[i] + d * (2.0 * cfg.control_weights[i % 2]);
        }
    }
    for (r, row) in system.gradient_rows.iter().enumerate() {
        let mut slack = system.residuals[r];
        if !du_is_zero {
            for (gi, d) in row.iter().zip(du.iter()) {
                slack = slack + *gi * *d;
            }
        }
        if slack.value() > 0.0 {
            let scale = slack * (2.0 * lambda_c);
            for (g, gi) in grad.iter_mut().zip(row.iter()) {
                *g = *g + scale * *gi;
            }
        }
    }
    grad
}

/// Parameters of the DC3-style fixed-step correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dc3Config {
    /// Gradient step size (default 1e-3).
    pub step_size: f64,
    /// Number of gradient steps (default 5).
    pub steps: usize,
}

impl Default for Dc3Config {
    fn default() -> Self {
        Dc3Config { step_size: 1e-3, steps: 5 }
    }
}

/// Fixed-step gradient correction on the true (re-evaluated) violations.
///
/// Each step moves along `−∇_u Σ ReLU(r(u))²` without a line search or box
/// projection.
pub fn dc3_correct(
    u: &ControlSequence,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    dc3: &Dc3Config,
) -> Correction {
    let flat = u.as_flat();
    let (corrected, delta) = dc3_correct_kernel(&flat, obstacles, cfg, dc3);
    Correction {
        corrected: ControlSequence::from_flat(&corrected).expect("even length"),
        delta,
        outer_iterations: dc3.steps,
    }
}

/// DC3 correction over a flat plan, generic over the scalar type.
pub fn dc3_correct_kernel<R: Real>(
    u_flat: &[R],
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    dc3: &Dc3Config,
) -> (Vec<R>, Vec<R>) {
    let mut current: Vec<R> = u_flat.to_vec();
    let zero = u_flat[0].constant_like(0.0);
    for _ in 0..dc3.steps {
        let system = residual_system_kernel(&current, obstacles, cfg);
        let mut grad: Vec<R> = vec![zero; current.len()];
        let mut any_active = false;
        for (r, row) in system.gradient_rows.iter().enumerate() {
            let slack = system.residuals[r];
            if slack.value() > 0.0 {
                any_active = true;
                let scale = slack * 2.0;
                for (g, gi) in grad.iter_mut().zip(row.iter()) {
                    *g = *g + scale * *gi;
                }
            }
        }
        if !any_active {
            break;
        }
        for (c, g) in current.iter_mut().zip(grad.iter()) {
            *c = *c - *g * dc3.step_size;
        }
    }
    let delta: Vec<R> = current.iter().zip(u_flat.iter()).map(|(c, u)| *c - *u).collect();
    (current, delta)
}

/// Which safety correction to apply to a raw plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionMode {
    /// SLPG projected-gradient correction.
    Slpg,
    /// DC3-style fixed-step gradient correction.
    Dc3,
    /// Leave the plan untouched.
    None,
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrectionMode::Slpg => "slpg",
            CorrectionMode::Dc3 => "dc3",
            CorrectionMode::None => "none",
        })
    }
}

impl std::str::FromStr for CorrectionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "slpg" => Ok(CorrectionMode::Slpg),
            "dc3" => Ok(CorrectionMode::Dc3),
            "none" => Ok(CorrectionMode::None),
            other => Err(crate::Error::Config(format!("unknown correction mode '{other}'"))),
        }
    }
}

/// Applies the selected correction to a plan.
pub fn apply_correction(
    u: &ControlSequence,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    mode: CorrectionMode,
    slpg: &SlpgConfig,
    dc3: &Dc3Config,
) -> ControlSequence {
    match mode {
        CorrectionMode::Slpg => correct(u, obstacles, cfg, slpg).corrected,
        CorrectionMode::Dc3 => dc3_correct(u, obstacles, cfg, dc3).corrected,
        CorrectionMode::None => u.clone(),
    }
}
