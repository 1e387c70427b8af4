//! Tracking objective over the planning horizon.
//!
//! `J(u) = Σ_{k=1..N} ‖x_k − x_goal‖²_Q + Σ_{k=0..N−1} ‖u_k‖²_R`, where the
//! states come from the local-frame rollout of `u`, `Q` weights the pose
//! error, and `R` weights control effort. Yaw error is a plain difference —
//! goals are expressed in the local frame, so no angle wrapping is applied.

use crate::diff::Real;
use crate::vehicle::{rollout, rollout_jacobian, ControlSequence, PlannerConfig, State};

/// Objective value of a control plan toward `goal`.
pub fn objective_value(u: &ControlSequence, goal: &State, cfg: &PlannerConfig) -> f64 {
    let traj = rollout(&State::origin(), u, cfg);
    let states: Vec<[f64; 3]> = traj.states.iter().map(State::as_array).collect();
    objective_kernel(&states, &u.as_flat(), goal, cfg)
}

/// Objective from precomputed rollout states, generic over the scalar type.
///
/// `states` must be the rollout of `u_flat` from the origin (horizon + 1
/// entries); passing them in avoids a second rollout when they are already
/// on a tape.
pub fn objective_kernel<R: Real>(
    states: &[[R; 3]],
    u_flat: &[R],
    goal: &State,
    cfg: &PlannerConfig,
) -> R {
    debug_assert_eq!(states.len(), u_flat.len() / 2 + 1);
    let g = goal.as_array();
    let q = cfg.state_weights;
    let r = cfg.control_weights;
    let mut total = u_flat[0].constant_like(0.0);
    for x in &states[1..] {
        for d in 0..3 {
            total = total + (x[d] - g[d]).sq() * q[d];
        }
    }
    for (i, &c) in u_flat.iter().enumerate() {
        total = total + c.sq() * r[i % 2];
    }
    total
}

/// Analytic gradient of the objective with respect to the flat control vector.
pub fn objective_gradient(u: &ControlSequence, goal: &State, cfg: &PlannerConfig) -> Vec<f64> {
    let traj = rollout(&State::origin(), u, cfg);
    let jac = rollout_jacobian(u, cfg);
    let g = goal.as_array();
    let q = cfg.state_weights;
    let r = cfg.control_weights;
    let flat = u.as_flat();
    let mut grad = vec![0.0; flat.len()];
    for (i, &c) in flat.iter().enumerate() {
        grad[i] = 2.0 * r[i % 2] * c;
    }
    for k in 1..traj.len() {
        let x = traj.states[k].as_array();
        let weighted = [
            2.0 * q[0] * (x[0] - g[0]),
            2.0 * q[1] * (x[1] - g[1]),
            2.0 * q[2] * (x[2] - g[2]),
        ];
        for i in 0..k.min(flat.len() / 2) {
            let block = jac.block(k, i);
            for col in 0..2 {
                grad[2 * i + col] +=
                    weighted[0] * block[0][col] + weighted[1] * block[1][col] + weighted[2] * block[2][col];
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::Control;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> PlannerConfig {
        PlannerConfig::default()
    }

    #[test]
    fn zero_plan_pays_tracking_error_every_step() {
        let u = ControlSequence::zeros(20);
        let goal = State { x: 1.0, y: 0.0, yaw: 0.0 };
        // Every rollout state stays at the origin: 20 · (2 · 1²) = 40.
        assert_abs_diff_eq!(objective_value(&u, &goal, &cfg()), 40.0, epsilon = 1e-12);
    }

    #[test]
    fn single_step_plan_toward_origin_goal() {
        let mut c = cfg();
        c.horizon = 1;
        let u = ControlSequence { controls: vec![Control { v: 1.0, steer: 0.0 }] };
        // State term 2·(0.1)², control term 1·1².
        assert_abs_diff_eq!(
            objective_value(&u, &State::origin(), &c),
            2.0 * 0.01 + 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn control_effort_uses_per_component_weights() {
        let mut c = cfg();
        c.horizon = 1;
        let u = ControlSequence { controls: vec![Control { v: 0.0, steer: 0.5 }] };
        let expected = 1.5 * 0.25; // steer weight · steer², no motion so no state error
        assert_abs_diff_eq!(objective_value(&u, &State::origin(), &c), expected, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            raw in proptest::collection::vec(-1.0..1.0f64, 12),
            gx in -2.0..2.0f64,
            gy in -2.0..2.0f64,
        ) {
            let cfg = cfg();
            let mut flat = raw;
            for (i, c) in flat.iter_mut().enumerate() {
                if i % 2 == 1 {
                    *c *= 0.6;
                }
            }
            let goal = State { x: gx, y: gy, yaw: 0.4 };
            let u = ControlSequence::from_flat(&flat).unwrap();
            let grad = objective_gradient(&u, &goal, &cfg);
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut up = flat.clone();
                let mut um = flat.clone();
                up[i] += h;
                um[i] -= h;
                let fp = objective_value(&ControlSequence::from_flat(&up).unwrap(), &goal, &cfg);
                let fm = objective_value(&ControlSequence::from_flat(&um).unwrap(), &goal, &cfg);
                let fd = (fp - fm) / (2.0 * h);
                prop_assert!((grad[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "component {}: analytic {} vs fd {}", i, grad[i], fd);
            }
        }

        #[test]
        fn objective_is_nonnegative(raw in proptest::collection::vec(-1.0..1.0f64, 8)) {
            let u = ControlSequence::from_flat(&raw).unwrap();
            let goal = State { x: 1.0, y: -1.0, yaw: 0.2 };
            prop_assert!(objective_value(&u, &goal, &cfg()) >= 0.0);
        }
    }
}
