//! Control-barrier-function obstacle constraints.
//!
//! Each circular obstacle induces a barrier `H(x) = (x−x_o)² + (y−y_o)² − ρ²`
//! with inflated radius `ρ = radius + robot_radius + safety_margin`; `H > 0`
//! means the pose is safe. Along a trajectory, each step/obstacle pair yields
//! the discrete-time residual `r = −(H(x_{k+1}) − H(x_k)) − γ·H(x_k)`, and
//! the constraint `r ≤ 0` keeps the barrier from decaying faster than the
//! rate γ allows.

use crate::diff::Real;
use crate::vehicle::{
    rollout_jacobian_kernel, ControlSequence, PlannerConfig, State, Trajectory,
};

/// Circular obstacle in the planning frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    /// Center x \[m\].
    pub x: f64,
    /// Center y \[m\].
    pub y: f64,
    /// Radius \[m\].
    pub radius: f64,
}

impl Obstacle {
    /// Squared inflated radius `ρ²` used by the barrier.
    pub fn inflated_radius_sq(&self, cfg: &PlannerConfig) -> f64 {
        let rho = self.radius + cfg.robot_radius + cfg.safety_margin;
        rho * rho
    }
}

/// One planning problem: a goal pose and the obstacles to avoid, both in the
/// robot's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    /// Target pose.
    pub goal: State,
    /// Obstacles, in dataset order (the order fixes constraint-row layout).
    pub obstacles: Vec<Obstacle>,
}

/// Barrier value of a pose with respect to one obstacle.
pub fn h_value(x: &State, obstacle: &Obstacle, cfg: &PlannerConfig) -> f64 {
    h_kernel(&x.as_array(), obstacle, obstacle.inflated_radius_sq(cfg))
}

/// Barrier value, generic over the scalar type.
pub fn h_kernel<R: Real>(x: &[R; 3], obstacle: &Obstacle, inflated_sq: f64) -> R {
    (x[0] - obstacle.x).sq() + (x[1] - obstacle.y).sq() - inflated_sq
}

/// Discrete barrier residual for one step; `≤ 0` means the constraint holds.
pub fn cbf_residual(x_k: &State, x_next: &State, obstacle: &Obstacle, cfg: &PlannerConfig) -> f64 {
    let h_k = h_value(x_k, obstacle, cfg);
    let h_next = h_value(x_next, obstacle, cfg);
    -(h_next - h_k) - cfg.cbf_decay * h_k
}

/// Residuals of every step/obstacle pair along a trajectory.
///
/// Entry `(k, j)` covers the transition `x_k → x_{k+1}` against obstacle `j`,
/// for `k = 0 … N−1` in trajectory order and `j` in obstacle order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    n_steps: usize,
    n_obstacles: usize,
    values: Vec<f64>,
}

impl ResidualMatrix {
    /// Builds a matrix from row-major values (`n_steps × n_obstacles`).
    pub fn from_values(n_steps: usize, n_obstacles: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_steps * n_obstacles, "residual matrix shape");
        ResidualMatrix { n_steps, n_obstacles, values }
    }

    /// Number of transition steps (planning horizon).
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of obstacles.
    pub fn n_obstacles(&self) -> usize {
        self.n_obstacles
    }

    /// Residual for step `k` and obstacle `j`.
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.n_obstacles + j]
    }

    /// Row-major view of all residuals (step-major, obstacle-minor).
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Residual matrix of a trajectory against a set of obstacles.
pub fn all_residuals(traj: &Trajectory, obstacles: &[Obstacle], cfg: &PlannerConfig) -> ResidualMatrix {
    assert!(!traj.is_empty(), "trajectory must hold at least the initial state");
    let n = traj.len() - 1;
    let mut values = Vec::with_capacity(n * obstacles.len());
    for k in 0..n {
        for obstacle in obstacles {
            values.push(cbf_residual(&traj.states[k], &traj.states[k + 1], obstacle, cfg));
        }
    }
    ResidualMatrix::from_values(n, obstacles.len(), values)
}

/// Total and worst constraint violation of a residual matrix.
///
/// Returns `(Σ max(0, r), max max(0, r))`; both are 0 for an empty matrix.
pub fn violation_stats(residuals: &ResidualMatrix) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0_f64;
    for &r in residuals.values() {
        let v = r.max(0.0);
        sum += v;
        max = max.max(v);
    }
    (sum, max)
}

/// Dense Jacobian of the stacked residual vector with respect to the flat
/// control vector: `(N·n_obs) × 2N`, rows ordered step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGradients {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ResidualGradients {
    /// Builds a Jacobian from row-major data (`rows × cols`).
    pub fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "residual gradient shape");
        ResidualGradients { rows, cols, data }
    }

    /// Number of constraint rows (`N·n_obs`).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of control components (`2N`).
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Gradient of residual row `r` with respect to every control component.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Residuals plus their control Jacobian in ragged form, generic over the
/// scalar type.
///
/// Row `k·n_obs + j` stores only the structurally nonzero gradient prefix of
/// length `2(k+1)` — controls from step `k+1` on cannot affect residual `k`.
pub struct ResidualSystem<R> {
    /// Stacked residual values, step-major.
    pub residuals: Vec<R>,
    /// Per-row gradient prefixes (length `2(k+1)` for row `k·n_obs + j`).
    pub gradient_rows: Vec<Vec<R>>,
    /// Number of obstacles.
    pub n_obstacles: usize,
    /// Planning horizon.
    pub horizon: usize,
}

/// Evaluates residuals and their gradients at a flat control vector.
pub fn residual_system_kernel<R: Real>(
    u_flat: &[R],
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
) -> ResidualSystem<R> {
    let n = u_flat.len() / 2;
    let (states, blocks) = rollout_jacobian_kernel(
        [u_flat[0].constant_like(0.0); 3],
        u_flat,
        cfg.dt,
        cfg.wheelbase,
    );
    let gamma = cfg.cbf_decay;
    let mut residuals = Vec::with_capacity(n * obstacles.len());
    let mut gradient_rows = Vec::with_capacity(n * obstacles.len());
    for k in 0..n {
        for obstacle in obstacles {
            let inflated_sq = obstacle.inflated_radius_sq(cfg);
            let h_k = h_kernel(&states[k], obstacle, inflated_sq);
            let h_next = h_kernel(&states[k + 1], obstacle, inflated_sq);
            residuals.push(-(h_next - h_k) - h_k * gamma);
            // ∂r/∂u_i = −∇H(x_{k+1})·J[k+1][i] + (1−γ)·∇H(x_k)·J[k][i];
            // ∇H = [2(x−x_o), 2(y−y_o), 0], so only position rows contribute.
            let gx_next = (states[k + 1][0] - obstacle.x) * 2.0;
            let gy_next = (states[k + 1][1] - obstacle.y) * 2.0;
            let gx_k = (states[k][0] - obstacle.x) * (2.0 * (1.0 - gamma));
            let gy_k = (states[k][1] - obstacle.y) * (2.0 * (1.0 - gamma));
            let mut row = Vec::with_capacity(2 * (k + 1));
            for i in 0..=k {
                let next_block = &blocks[k][i];
                for col in 0..2 {
                    let mut g = -(gx_next * next_block[0][col] + gy_next * next_block[1][col]);
                    if i < k {
                        let k_block = &blocks[k - 1][i];
                        g = g + gx_k * k_block[0][col] + gy_k * k_block[1][col];
                    }
                    row.push(g);
                }
            }
            gradient_rows.push(row);
        }
    }
    ResidualSystem {
        residuals,
        gradient_rows,
        n_obstacles: obstacles.len(),
        horizon: n,
    }
}

/// Dense Jacobian of all residuals at a control plan.
pub fn residual_gradients(
    u: &ControlSequence,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
) -> ResidualGradients {
    let flat = u.as_flat();
    let cols = flat.len();
    let system = residual_system_kernel(&flat, obstacles, cfg);
    let rows = system.gradient_rows.len();
    let mut data = vec![0.0; rows * cols];
    for (r, prefix) in system.gradient_rows.iter().enumerate() {
        data[r * cols..r * cols + prefix.len()].copy_from_slice(prefix);
    }
    ResidualGradients { rows, cols, data }
}
