//! Browser bindings for the SOMTP planner demo.
//!
//! Each export takes a JSON request string and returns a JSON response
//! string, so the page needs no generated glue beyond `wasm-bindgen`'s
//! string passing. Errors come back as `{"error": "..."}` objects instead
//! of exceptions.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use somtp::cbf::{all_residuals, violation_stats, Obstacle, ProblemInstance};
use somtp::sim::{run_task, SolverPlanner, Task, DEFAULT_TARGET_RADIUS};
use somtp::slpg::{correct, SlpgConfig};
use somtp::solver::{solve, SolverConfig};
use somtp::vehicle::{rollout, ControlSequence, PlannerConfig, State};

/// Plan request: goal pose, obstacles, and an optional horizon override.
#[derive(Debug, Deserialize)]
struct PlanRequest {
    /// Goal pose `[x, y, yaw]` in the robot frame.
    goal: [f64; 3],
    /// Obstacles as `[x, y, radius]` triples.
    #[serde(default)]
    obstacles: Vec<[f64; 3]>,
    /// Planning horizon (default 20).
    #[serde(default)]
    horizon: Option<usize>,
}

/// Solver response: the optimized plan and its diagnostics.
#[derive(Debug, Serialize)]
struct PlanResponse {
    /// Flat plan `[v0, steer0, v1, steer1, ...]`.
    plan: Vec<f64>,
    /// Visited poses `[x, y, yaw]`, starting at the origin.
    trajectory: Vec<[f64; 3]>,
    /// Objective value of the plan.
    objective: f64,
    /// Worst constraint violation (0 when feasible).
    max_violation: f64,
    /// Whether the solver converged to a feasible stationary point.
    converged: bool,
}

/// Correction request: a flat plan to repair plus the obstacle layout.
#[derive(Debug, Deserialize)]
struct CorrectRequest {
    /// Flat plan `[v0, steer0, ...]` to correct.
    plan: Vec<f64>,
    /// Obstacles as `[x, y, radius]` triples.
    #[serde(default)]
    obstacles: Vec<[f64; 3]>,
    /// Re-linearization (outer) iterations to run (default 1).
    #[serde(default)]
    outer_iters: Option<usize>,
    /// Projected-gradient steps per linearization (default 2).
    #[serde(default)]
    inner_iters: Option<usize>,
}

/// Correction response: the repaired plan and the violation change.
#[derive(Debug, Serialize)]
struct CorrectResponse {
    /// Corrected flat plan.
    plan: Vec<f64>,
    /// Trajectory of the corrected plan.
    trajectory: Vec<[f64; 3]>,
    /// Worst violation before the correction.
    max_violation_before: f64,
    /// Worst violation after the correction.
    max_violation_after: f64,
    /// Euclidean norm of the applied adjustment.
    delta_norm: f64,
}

/// Episode request: world-frame start and goal plus obstacles.
#[derive(Debug, Deserialize)]
struct SimulateRequest {
    /// Start pose `[x, y, yaw]` in the world frame.
    start: [f64; 3],
    /// Goal pose `[x, y, yaw]` in the world frame.
    goal: [f64; 3],
    /// Obstacles as `[x, y, radius]` triples in the world frame.
    #[serde(default)]
    obstacles: Vec<[f64; 3]>,
    /// Goal disc radius counting as arrival (default 0.3).
    #[serde(default)]
    target_radius: Option<f64>,
    /// Step budget before the episode fails (default 80).
    #[serde(default)]
    max_steps: Option<usize>,
    /// Planning horizon (default 20).
    #[serde(default)]
    horizon: Option<usize>,
}

/// Episode response: the driven world-frame trace and its outcome.
#[derive(Debug, Serialize)]
struct SimulateResponse {
    /// Visited world poses `[x, y, yaw]`; the first entry is the start.
    states: Vec<[f64; 3]>,
    /// Whether the goal disc was reached within the step budget.
    success: bool,
    /// Steps driven.
    steps: usize,
    /// Final distance to the goal position.
    final_distance: f64,
}

/// Error payload returned in place of a response.
#[derive(Debug, Serialize)]
struct ErrorResponse {
    /// Human-readable failure description.
    error: String,
}

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    let text = match result {
        Ok(response) => serde_json::to_string(&response),
        Err(error) => serde_json::to_string(&ErrorResponse { error }),
    };
    text.unwrap_or_else(|err| format!("{{\"error\":\"serialization failed: {err}\"}}"))
}

fn parse<'a, T: Deserialize<'a>>(request: &'a str) -> Result<T, String> {
    serde_json::from_str(request).map_err(|err| format!("bad request: {err}"))
}

fn to_state(triple: [f64; 3]) -> State {
    State { x: triple[0], y: triple[1], yaw: triple[2] }
}

fn to_obstacles(triples: &[[f64; 3]]) -> Vec<Obstacle> {
    triples
        .iter()
        .map(|t| Obstacle { x: t[0], y: t[1], radius: t[2] })
        .collect()
}

fn config_with_horizon(horizon: Option<usize>) -> PlannerConfig {
    let mut cfg = PlannerConfig::default();
    if let Some(n) = horizon {
        cfg.horizon = n;
    }
    cfg
}

fn trace(u: &ControlSequence, cfg: &PlannerConfig) -> Vec<[f64; 3]> {
    rollout(&State::origin(), u, cfg)
        .states
        .iter()
        .map(|s| [s.x, s.y, s.yaw])
        .collect()
}

fn max_violation(u: &ControlSequence, obstacles: &[Obstacle], cfg: &PlannerConfig) -> f64 {
    let traj = rollout(&State::origin(), u, cfg);
    violation_stats(&all_residuals(&traj, obstacles, cfg)).1
}

/// Solves one planning problem with the reference solver.
#[wasm_bindgen]
pub fn solve_plan(request: &str) -> String {
    respond(parse::<PlanRequest>(request).and_then(|req| {
        let cfg = config_with_horizon(req.horizon);
        cfg.validate().map_err(|err| err.to_string())?;
        let instance = ProblemInstance {
            goal: to_state(req.goal),
            obstacles: to_obstacles(&req.obstacles),
        };
        let result = solve(&instance, &cfg, &SolverConfig::default());
        Ok(PlanResponse {
            trajectory: trace(&result.plan, &cfg),
            objective: result.objective,
            max_violation: result.max_violation,
            converged: result.converged,
            plan: result.plan.as_flat(),
        })
    }))
}

/// Runs a few SLPG iterations on a plan; call repeatedly to animate.
#[wasm_bindgen]
pub fn correct_plan(request: &str) -> String {
    respond(parse::<CorrectRequest>(request).and_then(|req| {
        if req.plan.is_empty() || req.plan.len() % 2 != 0 {
            return Err("plan must be a nonempty even-length flat sequence".into());
        }
        let cfg = config_with_horizon(Some(req.plan.len() / 2));
        cfg.validate().map_err(|err| err.to_string())?;
        let obstacles = to_obstacles(&req.obstacles);
        let u = ControlSequence::from_flat(&req.plan).map_err(|err| err.to_string())?;
        let slpg = SlpgConfig {
            outer_iters: req.outer_iters.unwrap_or(1),
            inner_iters: req.inner_iters.unwrap_or(2),
            ..SlpgConfig::default()
        };
        let before = max_violation(&u, &obstacles, &cfg);
        let result = correct(&u, &obstacles, &cfg, &slpg);
        let after = max_violation(&result.corrected, &obstacles, &cfg);
        Ok(CorrectResponse {
            trajectory: trace(&result.corrected, &cfg),
            max_violation_before: before,
            max_violation_after: after,
            delta_norm: result.delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
            plan: result.corrected.as_flat(),
        })
    }))
}

/// Drives one closed-loop episode with the solver as the planner.
#[wasm_bindgen]
pub fn simulate_episode(request: &str) -> String {
    respond(parse::<SimulateRequest>(request).and_then(|req| {
        let cfg = config_with_horizon(req.horizon);
        cfg.validate().map_err(|err| err.to_string())?;
        let task = Task {
            start: to_state(req.start),
            goal: to_state(req.goal),
            obstacles: to_obstacles(&req.obstacles),
            target_radius: req.target_radius.unwrap_or(DEFAULT_TARGET_RADIUS),
            max_steps: req.max_steps.unwrap_or(80),
        };
        let mut planner = SolverPlanner::new(cfg.clone(), SolverConfig::default());
        let result = run_task(&mut planner, &task, &cfg).map_err(|err| err.to_string())?;
        Ok(SimulateResponse {
            states: result.states.iter().map(|s| [s.x, s.y, s.yaw]).collect(),
            success: result.success,
            steps: result.controls.len(),
            final_distance: result.final_distance,
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse_json(text: &str) -> serde_json::Value {
        serde_json::from_str(text).expect("valid JSON response")
    }

    #[test]
    fn solve_plan_reaches_an_easy_goal() {
        let response = solve_plan(r#"{"goal": [1.0, 0.0, 0.0], "obstacles": [], "horizon": 10}"#);
        let value = parse_json(&response);
        assert!(value.get("error").is_none(), "unexpected error: {response}");
        assert_eq!(value["trajectory"].as_array().unwrap().len(), 11);
        assert!(value["converged"].as_bool().unwrap());
        assert!(value["max_violation"].as_f64().unwrap() <= 1e-6);
    }

    #[test]
    fn correct_plan_reduces_the_violation() {
        let request = r#"{
            "plan": [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0,
                     1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            "obstacles": [[0.6, 0.05, 0.3]],
            "outer_iters": 10
        }"#;
        let value = parse_json(&correct_plan(request));
        assert!(value.get("error").is_none());
        let before = value["max_violation_before"].as_f64().unwrap();
        let after = value["max_violation_after"].as_f64().unwrap();
        assert!(before > 0.0);
        assert!(after < before);
    }

    #[test]
    fn simulate_episode_reports_success() {
        let request = r#"{"start": [0.0, 0.0, 0.0], "goal": [1.5, 0.5, 0.0], "obstacles": []}"#;
        let value = parse_json(&simulate_episode(request));
        assert!(value.get("error").is_none());
        assert!(value["success"].as_bool().unwrap());
        let states = value["states"].as_array().unwrap();
        let last = states.last().unwrap().as_array().unwrap();
        let dx = last[0].as_f64().unwrap() - 1.5;
        let dy = last[1].as_f64().unwrap() - 0.5;
        assert_abs_diff_eq!(value["final_distance"].as_f64().unwrap(), dx.hypot(dy), epsilon = 1e-9);
    }

    #[test]
    fn malformed_requests_come_back_as_error_objects() {
        let value = parse_json(&solve_plan("not json"));
        assert!(value["error"].as_str().unwrap().starts_with("bad request"));
        let value = parse_json(&correct_plan(r#"{"plan": [1.0], "obstacles": []}"#));
        assert!(value["error"].as_str().unwrap().contains("even-length"));
    }
}
