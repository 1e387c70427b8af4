//! Bicycle kinematics, horizon rollouts, and their Jacobians.
//!
//! Planning happens in the robot's local frame: the initial state is the
//! origin with zero yaw, and a control sequence of `horizon` (speed, steer)
//! pairs determines the trajectory through forward-Euler bicycle kinematics.
//! Flattened control vectors interleave as `[v_0, steer_0, v_1, steer_1, …]`.

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::{Error, Result};

/// Planar pose: position and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    /// Position along the local x axis \[m\].
    pub x: f64,
    /// Position along the local y axis \[m\].
    pub y: f64,
    /// Heading angle \[rad\].
    pub yaw: f64,
}

impl State {
    /// Pose at the local-frame origin.
    pub fn origin() -> Self {
        State { x: 0.0, y: 0.0, yaw: 0.0 }
    }

    /// Components as an array `[x, y, yaw]`.
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.yaw]
    }

    /// Pose from an `[x, y, yaw]` array.
    pub fn from_array(a: [f64; 3]) -> Self {
        State { x: a[0], y: a[1], yaw: a[2] }
    }
}

/// One control input: longitudinal speed and steering angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    /// Longitudinal speed \[m/s\].
    pub v: f64,
    /// Steering angle \[rad\], must stay within (−π/2, π/2).
    pub steer: f64,
}

/// Open-loop control plan over the horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlSequence {
    /// Controls `u_0 … u_{N−1}` in application order.
    pub controls: Vec<Control>,
}

impl ControlSequence {
    /// All-zero plan of length `n`.
    pub fn zeros(n: usize) -> Self {
        ControlSequence { controls: vec![Control { v: 0.0, steer: 0.0 }; n] }
    }

    /// Number of steps.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    /// True when the plan has no steps.
    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Interleaved flat vector `[v_0, steer_0, v_1, steer_1, …]`.
    pub fn as_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(2 * self.controls.len());
        for c in &self.controls {
            flat.push(c.v);
            flat.push(c.steer);
        }
        flat
    }

    /// Rebuilds a plan from an interleaved flat vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::ShapeMismatch {
                context: "control vector length must be even",
                expected: flat.len() + 1,
                got: flat.len(),
            });
        }
        Ok(ControlSequence {
            controls: flat.chunks_exact(2).map(|c| Control { v: c[0], steer: c[1] }).collect(),
        })
    }

    /// Clamps every component into the configured control box.
    pub fn clamp_to_box(&mut self, cfg: &PlannerConfig) {
        for c in &mut self.controls {
            c.v = c.v.clamp(cfg.control_min[0], cfg.control_max[0]);
            c.steer = c.steer.clamp(cfg.control_min[1], cfg.control_max[1]);
        }
    }
}

/// State sequence produced by a rollout: `x_0 … x_N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Visited states, starting with the initial state.
    pub states: Vec<State>,
}

impl Trajectory {
    /// Number of stored states (horizon + 1).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// True when the trajectory holds no states.
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Geometry, weights, and bounds shared by every planner component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Number of planning steps N (default 20).
    pub horizon: usize,
    /// Integration step \[s\] (default 0.1).
    pub dt: f64,
    /// Wheelbase length \[m\] (default 0.5).
    pub wheelbase: f64,
    /// Diagonal weights on the (x, y, yaw) tracking error (default \[2, 2, 1\]).
    pub state_weights: [f64; 3],
    /// Diagonal weights on the (v, steer) control effort (default \[1, 1.5\]).
    pub control_weights: [f64; 2],
    /// Barrier decay rate γ in (0, 1] (default 0.5).
    pub cbf_decay: f64,
    /// Robot body radius \[m\] (default 0.3).
    pub robot_radius: f64,
    /// Extra clearance added to every obstacle \[m\] (default 0.1).
    pub safety_margin: f64,
    /// Lower control bounds (v, steer) (default \[−1, −0.6\]).
    pub control_min: [f64; 2],
    /// Upper control bounds (v, steer) (default \[1, 0.6\]).
    pub control_max: [f64; 2],
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 20,
            dt: 0.1,
            wheelbase: 0.5,
            state_weights: [2.0, 2.0, 1.0],
            control_weights: [1.0, 1.5],
            cbf_decay: 0.5,
            robot_radius: 0.3,
            safety_margin: 0.1,
            control_min: [-1.0, -0.6],
            control_max: [1.0, 0.6],
        }
    }
}

impl PlannerConfig {
    /// Checks internal consistency; call once on externally supplied configs.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !(self.wheelbase > 0.0) {
            return Err(Error::Config("dt and wheelbase must be positive".into()));
        }
        if !(self.cbf_decay > 0.0 && self.cbf_decay <= 1.0) {
            return Err(Error::Config("cbf_decay must lie in (0, 1]".into()));
        }
        if self.robot_radius < 0.0 || self.safety_margin < 0.0 {
            return Err(Error::Config("radii must be non-negative".into()));
        }
        if self.state_weights.iter().chain(self.control_weights.iter()).any(|w| *w < 0.0) {
            return Err(Error::Config("weights must be non-negative".into()));
        }
        for i in 0..2 {
            if !(self.control_min[i] < self.control_max[i]) {
                return Err(Error::Config("control bounds must satisfy min < max".into()));
            }
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if self.control_min[1] <= -half_pi || self.control_max[1] >= half_pi {
            return Err(Error::Config("steer bounds must stay within (−π/2, π/2)".into()));
        }
        Ok(())
    }

    /// Lower bound for flat-vector component `i` (alternating v / steer).
    pub fn flat_min(&self, i: usize) -> f64 {
        self.control_min[i % 2]
    }

    /// Upper bound for flat-vector component `i` (alternating v / steer).
    pub fn flat_max(&self, i: usize) -> f64 {
        self.control_max[i % 2]
    }

    /// Stable 64-bit fingerprint of the configuration (FNV-1a over its
    /// canonical JSON encoding); stored in checkpoints to detect mismatches.
    pub fn fingerprint(&self) -> u64 {
        let encoded = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in encoded.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// One forward-Euler step of the bicycle model, generic over the scalar type.
pub fn step_kernel<R: Real>(x: [R; 3], u: [R; 2], dt: f64, wheelbase: f64) -> [R; 3] {
    [
        x[0] + u[0] * x[2].cos() * dt,
        x[1] + u[0] * x[2].sin() * dt,
        x[2] + u[0] * u[1].tan() * (dt / wheelbase),
    ]
}

/// Applies one control to a state.
pub fn step(x: &State, u: &Control, cfg: &PlannerConfig) -> State {
    State::from_array(step_kernel(x.as_array(), [u.v, u.steer], cfg.dt, cfg.wheelbase))
}

/// Rolls the model forward from `x0`, returning all horizon + 1 states.
pub fn rollout(x0: &State, u: &ControlSequence, cfg: &PlannerConfig) -> Trajectory {
    let mut states = Vec::with_capacity(u.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for c in &u.controls {
        x = step(&x, c, cfg);
        states.push(x);
    }
    Trajectory { states }
}

/// Rollout over a flat control vector, generic over the scalar type.
pub fn rollout_kernel<R: Real>(x0: [R; 3], u_flat: &[R], dt: f64, wheelbase: f64) -> Vec<[R; 3]> {
    debug_assert!(u_flat.len() % 2 == 0);
    let mut states = Vec::with_capacity(u_flat.len() / 2 + 1);
    states.push(x0);
    let mut x = x0;
    for c in u_flat.chunks_exact(2) {
        x = step_kernel(x, [c[0], c[1]], dt, wheelbase);
        states.push(x);
    }
    states
}

/// Partial derivatives of one step: `A = ∂x'/∂x` (3×3) and `B = ∂x'/∂u` (3×2).
pub fn step_jacobians(x: &State, u: &Control, cfg: &PlannerConfig) -> ([[f64; 3]; 3], [[f64; 2]; 3]) {
    let (sin_yaw, cos_yaw) = x.yaw.sin_cos();
    let tan_steer = u.steer.tan();
    let a = [
        [1.0, 0.0, -u.v * sin_yaw * cfg.dt],
        [0.0, 1.0, u.v * cos_yaw * cfg.dt],
        [0.0, 0.0, 1.0],
    ];
    let b = [
        [cos_yaw * cfg.dt, 0.0],
        [sin_yaw * cfg.dt, 0.0],
        [tan_steer * cfg.dt / cfg.wheelbase, u.v * (1.0 + tan_steer * tan_steer) * cfg.dt / cfg.wheelbase],
    ];
    (a, b)
}

/// Sensitivity of every rollout state to every control input.
///
/// Block `(k, i)` holds `∂x_k/∂u_i` as a 3×2 matrix; controls at or after
/// step `k` cannot influence `x_k`, so those blocks are zero.
#[derive(Debug, Clone)]
pub struct RolloutJacobian {
    horizon: usize,
    /// Lower-triangular blocks, indexed `[k−1][i]` for `1 ≤ k ≤ N`, `i < k`.
    blocks: Vec<Vec<[[f64; 2]; 3]>>,
}

impl RolloutJacobian {
    /// Planning horizon the Jacobian was computed for.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Block `∂x_k/∂u_i`; zero when `i ≥ k` (causality) or `k = 0`.
    pub fn block(&self, k: usize, i: usize) -> [[f64; 2]; 3] {
        if k == 0 || i >= k {
            return [[0.0; 2]; 3];
        }
        self.blocks[k - 1][i]
    }
}

/// Jacobian blocks of a rollout from `x0`, generic over the scalar type.
///
/// Returns the rollout states together with blocks `[k−1][i] = ∂x_k/∂u_i`.
/// Uses the structure of the one-step Jacobians (`A` is identity except for
/// its third column) so each block update costs four multiply-adds.
pub fn rollout_jacobian_kernel<R: Real>(
    x0: [R; 3],
    u_flat: &[R],
    dt: f64,
    wheelbase: f64,
) -> (Vec<[R; 3]>, Vec<Vec<[[R; 2]; 3]>>) {
    debug_assert!(u_flat.len() % 2 == 0);
    let n = u_flat.len() / 2;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0);
    let mut blocks: Vec<Vec<[[R; 2]; 3]>> = Vec::with_capacity(n);
    let mut x = x0;
    for k in 0..n {
        let u = [u_flat[2 * k], u_flat[2 * k + 1]];
        let (sin_yaw, cos_yaw) = (x[2].sin(), x[2].cos());
        let tan_steer = u[1].tan();
        // Non-identity entries of A_k and the nonzero entries of B_k.
        let a02 = -(u[0] * sin_yaw * dt);
        let a12 = u[0] * cos_yaw * dt;
        let zero = a02.constant_like(0.0);
        let b = [
            [cos_yaw * dt, zero],
            [sin_yaw * dt, zero],
            [tan_steer * (dt / wheelbase), (tan_steer.sq() + 1.0) * u[0] * (dt / wheelbase)],
        ];
        // Propagate existing blocks: rows 0 and 1 pick up the yaw coupling.
        let mut row: Vec<[[R; 2]; 3]> = Vec::with_capacity(k + 1);
        if k > 0 {
            for prev in &blocks[k - 1] {
                row.push([
                    [prev[0][0] + a02 * prev[2][0], prev[0][1] + a02 * prev[2][1]],
                    [prev[1][0] + a12 * prev[2][0], prev[1][1] + a12 * prev[2][1]],
                    prev[2],
                ]);
            }
        }
        row.push(b);
        blocks.push(row);
        x = step_kernel(x, u, dt, wheelbase);
        states.push(x);
    }
    (states, blocks)
}

/// Jacobian of the local-frame rollout with respect to the control plan.
pub fn rollout_jacobian(u: &ControlSequence, cfg: &PlannerConfig) -> RolloutJacobian {
    let flat = u.as_flat();
    let (_, blocks) = rollout_jacobian_kernel([0.0; 3], &flat, cfg.dt, cfg.wheelbase);
    RolloutJacobian { horizon: u.len(), blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> PlannerConfig {
        PlannerConfig::default()
    }

    #[test]
    fn straight_drive_advances_x_only() {
        let x1 = step(&State::origin(), &Control { v: 1.0, steer: 0.0 }, &cfg());
        assert_abs_diff_eq!(x1.x, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(x1.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x1.yaw, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_step_straight_rollout() {
        let u = ControlSequence {
            controls: vec![Control { v: 1.0, steer: 0.0 }; 2],
        };
        let traj = rollout(&State::origin(), &u, &cfg());
        assert_eq!(traj.len(), 3);
        assert_abs_diff_eq!(traj.states[1].x, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(traj.states[2].x, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(traj.states[2].y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn steering_turns_heading_by_tan_over_wheelbase() {
        let x1 = step(&State::origin(), &Control { v: 1.0, steer: 0.3 }, &cfg());
        assert_abs_diff_eq!(x1.yaw, 0.3_f64.tan() * 0.1 / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn step_jacobian_matches_hand_values_at_quarter_turn() {
        let x = State { x: 0.0, y: 0.0, yaw: std::f64::consts::FRAC_PI_2 };
        let u = Control { v: 1.0, steer: 0.0 };
        let (a, b) = step_jacobians(&x, &u, &cfg());
        assert_abs_diff_eq!(a[0][2], -0.1, epsilon = 1e-15); // ∂x'/∂yaw = −v·sin(yaw)·dt
        assert_abs_diff_eq!(b[1][0], 0.1, epsilon = 1e-15); // ∂y'/∂v = sin(yaw)·dt
        assert_abs_diff_eq!(b[2][1], 0.2, epsilon = 1e-15); // ∂yaw'/∂steer = v·dt/L at steer = 0
    }

    fn fd_step_jacobians(x: &State, u: &Control, cfg: &PlannerConfig) -> ([[f64; 3]; 3], [[f64; 2]; 3]) {
        let h = 1e-7;
        let mut a = [[0.0; 3]; 3];
        let mut b = [[0.0; 2]; 3];
        for j in 0..3 {
            let mut xp = x.as_array();
            let mut xm = x.as_array();
            xp[j] += h;
            xm[j] -= h;
            let fp = step(&State::from_array(xp), u, cfg).as_array();
            let fm = step(&State::from_array(xm), u, cfg).as_array();
            for i in 0..3 {
                a[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..2 {
            let mut up = [u.v, u.steer];
            let mut um = up;
            up[j] += h;
            um[j] -= h;
            let fp = step(x, &Control { v: up[0], steer: up[1] }, cfg).as_array();
            let fm = step(x, &Control { v: um[0], steer: um[1] }, cfg).as_array();
            for i in 0..3 {
                b[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        (a, b)
    }

    proptest! {
        #[test]
        fn step_jacobians_match_finite_differences(
            yaw in -3.0..3.0f64,
            v in -1.0..1.0f64,
            steer in -0.6..0.6f64,
        ) {
            let x = State { x: 0.4, y: -0.2, yaw };
            let u = Control { v, steer };
            let (a, b) = step_jacobians(&x, &u, &cfg());
            let (a_fd, b_fd) = fd_step_jacobians(&x, &u, &cfg());
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((a[i][j] - a_fd[i][j]).abs() < 1e-6);
                }
                for j in 0..2 {
                    prop_assert!((b[i][j] - b_fd[i][j]).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn rollout_jacobian_matches_finite_differences(raw in proptest::collection::vec(-1.0..1.0f64, 10)) {
            let cfg = cfg();
            let mut flat = raw;
            for (i, c) in flat.iter_mut().enumerate() {
                if i % 2 == 1 {
                    *c *= 0.6;
                }
            }
            let u = ControlSequence::from_flat(&flat).unwrap();
            let jac = rollout_jacobian(&u, &cfg);
            let h = 1e-7;
            for i in 0..flat.len() {
                let mut up = flat.clone();
                let mut um = flat.clone();
                up[i] += h;
                um[i] -= h;
                let tp = rollout(&State::origin(), &ControlSequence::from_flat(&up).unwrap(), &cfg);
                let tm = rollout(&State::origin(), &ControlSequence::from_flat(&um).unwrap(), &cfg);
                for k in 1..=u.len() {
                    let block = jac.block(k, i / 2);
                    let fp = tp.states[k].as_array();
                    let fm = tm.states[k].as_array();
                    for r in 0..3 {
                        let fd = (fp[r] - fm[r]) / (2.0 * h);
                        prop_assert!((block[r][i % 2] - fd).abs() < 1e-5,
                            "block ({}, {}) row {} col {}: analytic {} vs fd {}",
                            k, i / 2, r, i % 2, block[r][i % 2], fd);
                    }
                }
            }
        }
    }

    #[test]
    fn causality_blocks_are_zero() {
        let u = ControlSequence::zeros(4);
        let jac = rollout_jacobian(&u, &cfg());
        assert_eq!(jac.block(2, 3), [[0.0; 2]; 3]);
        assert_eq!(jac.block(2, 2), [[0.0; 2]; 3]);
        assert_eq!(jac.block(0, 0), [[0.0; 2]; 3]);
    }

    #[test]
    fn flat_round_trip_preserves_controls() {
        let u = ControlSequence {
            controls: vec![Control { v: 0.3, steer: -0.2 }, Control { v: -0.9, steer: 0.55 }],
        };
        let round = ControlSequence::from_flat(&u.as_flat()).unwrap();
        assert_eq!(u, round);
        assert!(ControlSequence::from_flat(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn default_config_is_valid_and_fingerprint_is_stable() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.fingerprint(), cfg().fingerprint());
        let mut other = cfg();
        other.horizon = 10;
        assert_ne!(c.fingerprint(), other.fingerprint());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg();
        c.horizon = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.cbf_decay = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.control_min[0] = 2.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.control_max[1] = 1.6;
        assert!(c.validate().is_err());
    }
}
