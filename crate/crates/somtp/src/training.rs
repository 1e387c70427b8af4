//! Trainers for the policy network: the ALM-based self-supervised method
//! with guide-policy constraints, its ablations, and the baseline trainers.
//!
//! Every method shares one loop: encode a batch, run the network forward,
//! evaluate a per-item loss on the plan (differentiating through the safety
//! correction where the method uses one), average the per-item plan
//! gradients, and push them back through the network. The methods differ
//! only in the correction applied to the raw plan and in the loss assembled
//! on top of it:
//!
//! * `somtp` — SLPG correction; augmented-Lagrangian loss over the barrier
//!   residuals plus guide terms tying the raw plan to its correction.
//! * `somtp-no-guide` — SLPG correction, barrier terms only.
//! * `alm-only` — no correction, barrier terms only.
//! * `penalty` — no correction; fixed quadratic penalty on violations.
//! * `dc3` — gradient-descent correction; fixed quadratic penalty.
//! * `mse` / `mae` — supervised imitation of precomputed solver plans.

use ndarray::{Array1, Array2};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbf::{Obstacle, ProblemInstance};
use crate::diff::{Real, Tape};
use crate::objective::objective_kernel;
use crate::policy::{encode_instance, NetworkGradients, PolicyNetwork};
use crate::rng::{stream, STREAM_DROPOUT, STREAM_SHUFFLE};
use crate::slpg::{correct_kernel, dc3_correct_kernel, Dc3Config, SlpgConfig};
use crate::vehicle::{rollout_kernel, PlannerConfig};
use crate::{Error, Result};

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    /// SLPG correction with the full ALM loss (barrier + guide channels).
    Somtp,
    /// SLPG correction with the barrier channel only.
    SomtpNoGuide,
    /// ALM loss on the raw plan, no correction.
    AlmOnly,
    /// Fixed quadratic penalty on the raw plan.
    Penalty,
    /// Gradient-descent correction with a fixed quadratic penalty.
    Dc3,
    /// Supervised mean-squared-error imitation of solver plans.
    Mse,
    /// Supervised mean-absolute-error imitation of solver plans.
    Mae,
}

impl TrainMethod {
    /// All methods, in presentation order.
    pub fn all() -> [TrainMethod; 7] {
        [
            TrainMethod::Somtp,
            TrainMethod::SomtpNoGuide,
            TrainMethod::AlmOnly,
            TrainMethod::Penalty,
            TrainMethod::Dc3,
            TrainMethod::Mse,
            TrainMethod::Mae,
        ]
    }

    /// Whether the method imitates precomputed solver plans.
    pub fn needs_targets(&self) -> bool {
        matches!(self, TrainMethod::Mse | TrainMethod::Mae)
    }

    /// Whether the method maintains augmented-Lagrangian multipliers.
    pub fn uses_alm(&self) -> bool {
        matches!(self, TrainMethod::Somtp | TrainMethod::SomtpNoGuide | TrainMethod::AlmOnly)
    }

    /// Whether the loss includes the guide terms on the correction.
    pub fn uses_guide(&self) -> bool {
        matches!(self, TrainMethod::Somtp)
    }
}

impl std::fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TrainMethod::Somtp => "somtp",
            TrainMethod::SomtpNoGuide => "somtp-no-guide",
            TrainMethod::AlmOnly => "alm-only",
            TrainMethod::Penalty => "penalty",
            TrainMethod::Dc3 => "dc3",
            TrainMethod::Mse => "mse",
            TrainMethod::Mae => "mae",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMethod::all()
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown training method '{s}'")))
    }
}

/// Gradient-descent flavor used for the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain stochastic gradient descent.
    Sgd,
    /// Adam with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8).
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Augmented-Lagrangian schedule shared by both constraint channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmConfig {
    /// Initial penalty weight μ for each channel (default 1).
    pub mu_init: f64,
    /// Growth factor ε applied when an epoch shrinks a channel's mean
    /// violation below `best/ε` (default 2).
    pub growth: f64,
    /// Upper bound on each penalty weight (default 1e4).
    pub mu_cap: f64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig { mu_init: 1.0, growth: 2.0, mu_cap: 1e4 }
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Which trainer to run (default `somtp`).
    pub method: TrainMethod,
    /// Number of passes over the training set (default 50).
    pub epochs: usize,
    /// Instances per gradient step (default 64).
    pub batch_size: usize,
    /// Step size of the parameter updates (default 1e-4).
    pub learning_rate: f64,
    /// Seed for shuffling, dropout, and initialization streams (default 0).
    pub seed: u64,
    /// Parameter-update rule (default `sgd`).
    pub optimizer: OptimizerKind,
    /// Fixed violation weight λ_g of the penalty and DC3 losses (default 10).
    pub penalty_weight: f64,
    /// Augmented-Lagrangian schedule for the ALM methods.
    pub alm: AlmConfig,
    /// Safety-correction settings used while training.
    pub slpg: SlpgConfig,
    /// Gradient-correction settings for the DC3 trainer.
    pub dc3: Dc3Config,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: TrainMethod::Somtp,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            penalty_weight: 10.0,
            alm: AlmConfig::default(),
            slpg: SlpgConfig::training(),
            dc3: Dc3Config::default(),
        }
    }
}

impl TrainConfig {
    /// Checks internal consistency; call once on externally supplied configs.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive and finite".into()));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty_weight must be nonnegative".into()));
        }
        if !(self.alm.mu_init > 0.0) {
            return Err(Error::Config("alm.mu_init must be positive".into()));
        }
        if !(self.alm.growth > 1.0) {
            return Err(Error::Config("alm.growth must exceed 1".into()));
        }
        if self.alm.mu_cap < self.alm.mu_init {
            return Err(Error::Config("alm.mu_cap must be at least alm.mu_init".into()));
        }
        Ok(())
    }
}

/// Multipliers and penalty weights of the two ALM constraint channels:
/// the barrier residuals (one multiplier per step and obstacle) and the
/// guide terms (one multiplier per control component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmState {
    /// Multipliers λ for the barrier residual constraints, step-major.
    pub lambda_cbf: Vec<f64>,
    /// Multipliers λ for the guide constraints, one per control component.
    pub lambda_guide: Vec<f64>,
    /// Penalty weight of the barrier channel.
    pub mu_cbf: f64,
    /// Penalty weight of the guide channel.
    pub mu_guide: f64,
    best_cbf: Option<f64>,
    best_guide: Option<f64>,
}

impl AlmState {
    /// Zero multipliers and initial penalty weights for a problem family.
    pub fn new(n_residuals: usize, n_controls: usize, cfg: &AlmConfig) -> Self {
        AlmState {
            lambda_cbf: vec![0.0; n_residuals],
            lambda_guide: vec![0.0; n_controls],
            mu_cbf: cfg.mu_init,
            mu_guide: cfg.mu_init,
            best_cbf: None,
            best_guide: None,
        }
    }

    /// Dual ascent after one gradient step: `λ ← max(0, λ + μ·E[violation])`
    /// with batch means of the violations. Pass an empty guide slice to
    /// leave that channel untouched.
    pub fn update_multipliers(&mut self, mean_h: &[f64], mean_du_abs: &[f64]) {
        debug_assert_eq!(mean_h.len(), self.lambda_cbf.len());
        for (l, &h) in self.lambda_cbf.iter_mut().zip(mean_h.iter()) {
            *l = (*l + self.mu_cbf * h).max(0.0);
        }
        if !mean_du_abs.is_empty() {
            debug_assert_eq!(mean_du_abs.len(), self.lambda_guide.len());
            for (l, &d) in self.lambda_guide.iter_mut().zip(mean_du_abs.iter()) {
                *l = (*l + self.mu_guide * d).max(0.0);
            }
        }
    }

    /// Penalty update after one epoch. A channel's weight grows by the
    /// configured factor only when the epoch's mean violation fell below
    /// `best/growth`; the first epoch just records the baseline. Pass
    /// `None` for the guide mean when the method has no guide channel.
    pub fn end_epoch(&mut self, mean_cbf: f64, mean_guide: Option<f64>, cfg: &AlmConfig) {
        Self::end_epoch_channel(&mut self.best_cbf, &mut self.mu_cbf, mean_cbf, cfg);
        if let Some(mean) = mean_guide {
            Self::end_epoch_channel(&mut self.best_guide, &mut self.mu_guide, mean, cfg);
        }
    }

    fn end_epoch_channel(best: &mut Option<f64>, mu: &mut f64, mean: f64, cfg: &AlmConfig) {
        match *best {
            None => *best = Some(mean),
            Some(b) if mean < b / cfg.growth => {
                *best = Some(mean);
                *mu = (*mu * cfg.growth).min(cfg.mu_cap);
            }
            Some(_) => {}
        }
    }
}

/// Metrics recorded at the end of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// Epoch index, 0-based.
    pub epoch: usize,
    /// Mean per-item loss over the epoch.
    pub loss: f64,
    /// Mean rectified barrier residual over every item and constraint.
    pub mean_violation: f64,
    /// Largest rectified barrier residual seen in the epoch.
    pub max_violation: f64,
    /// Mean per-item squared correction magnitude `Σ Δu²`.
    pub mean_correction_sq: f64,
    /// Barrier-channel penalty weight after the epoch's update.
    pub mu_cbf: f64,
    /// Guide-channel penalty weight after the epoch's update.
    pub mu_guide: f64,
}

/// History of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Trainer that produced the run.
    pub method: TrainMethod,
    /// Seed the run was launched with.
    pub seed: u64,
    /// One row per completed epoch.
    pub epochs: Vec<EpochRow>,
}

/// Outcome of evaluating a training loss on one instance.
pub struct LossEval<R> {
    /// The scalar loss.
    pub loss: R,
    /// Final plan the loss was evaluated on (corrected where applicable).
    pub plan: Vec<R>,
    /// Correction `Δu = plan − raw plan` (zeros for correction-free methods).
    pub correction: Vec<R>,
    /// Tracking objective of the final plan.
    pub objective: R,
    /// Rectified barrier residuals of the final plan, step-major.
    pub relu_residuals: Vec<R>,
}

/// Evaluates the training loss of a self-supervised method on one raw plan,
/// generic over the scalar type so the same code runs on recorded variables
/// and on plain values. `alm` supplies the multipliers for the ALM methods
/// and is ignored by `penalty` and `dc3`.
///
/// Panics when called with a supervised method (`mse`/`mae`); those losses
/// are closed-form and never evaluated through this kernel.
pub fn loss_kernel<R: Real>(
    u_raw: &[R],
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
    tcfg: &TrainConfig,
    alm: Option<&AlmState>,
) -> LossEval<R> {
    let zero = u_raw[0].constant_like(0.0);
    let (plan, correction) = match tcfg.method {
        TrainMethod::Somtp | TrainMethod::SomtpNoGuide => {
            let (plan, du, _) = correct_kernel(u_raw, &instance.obstacles, cfg, &tcfg.slpg);
            (plan, du)
        }
        TrainMethod::Dc3 => dc3_correct_kernel(u_raw, &instance.obstacles, cfg, &tcfg.dc3),
        TrainMethod::AlmOnly | TrainMethod::Penalty => {
            (u_raw.to_vec(), vec![zero; u_raw.len()])
        }
        TrainMethod::Mse | TrainMethod::Mae => {
            panic!("supervised losses are closed-form; loss_kernel does not evaluate them")
        }
    };
    let states = rollout_kernel([zero; 3], &plan, cfg.dt, cfg.wheelbase);
    let objective = objective_kernel(&states, &plan, &instance.goal, cfg);
    let relu_residuals = relu_residuals_kernel(&states, &instance.obstacles, cfg);

    let mut loss = objective;
    match tcfg.method {
        TrainMethod::Penalty | TrainMethod::Dc3 => {
            for h in &relu_residuals {
                loss = loss + h.sq() * tcfg.penalty_weight;
            }
        }
        _ => {
            let alm = alm.expect("ALM methods need multiplier state");
            debug_assert_eq!(alm.lambda_cbf.len(), relu_residuals.len());
            let half_mu = 0.5 * alm.mu_cbf;
            for (h, &lambda) in relu_residuals.iter().zip(alm.lambda_cbf.iter()) {
                loss = loss + *h * lambda + h.sq() * half_mu;
            }
            if tcfg.method.uses_guide() {
                debug_assert_eq!(alm.lambda_guide.len(), correction.len());
                let half_mu = 0.5 * alm.mu_guide;
                for (d, &lambda) in correction.iter().zip(alm.lambda_guide.iter()) {
                    loss = loss + d.abs() * lambda + d.sq() * half_mu;
                }
            }
        }
    }
    LossEval { loss, plan, correction, objective, relu_residuals }
}

/// Rectified barrier residuals `max(0, r)` of a rolled-out plan, step-major.
fn relu_residuals_kernel<R: Real>(
    states: &[[R; 3]],
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
) -> Vec<R> {
    use crate::cbf::h_kernel;
    let n = states.len() - 1;
    let gamma = cfg.cbf_decay;
    let inflated: Vec<f64> = obstacles.iter().map(|o| o.inflated_radius_sq(cfg)).collect();
    let mut out = Vec::with_capacity(n * obstacles.len());
    for k in 0..n {
        for (obstacle, &inflated_sq) in obstacles.iter().zip(inflated.iter()) {
            let h_k = h_kernel(&states[k], obstacle, inflated_sq);
            let h_next = h_kernel(&states[k + 1], obstacle, inflated_sq);
            out.push((-(h_next - h_k) - h_k * gamma).relu());
        }
    }
    out
}

/// Per-item result of one loss-and-gradient evaluation.
struct ItemOutcome {
    loss: f64,
    grad_u: Vec<f64>,
    relu_residuals: Vec<f64>,
    correction_abs: Vec<f64>,
    correction_sq_sum: f64,
    max_violation: f64,
}

/// Loss and plan gradient of one item through the recording tape.
fn tape_outcome(
    u_row: &[f64],
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
    tcfg: &TrainConfig,
    alm: Option<&AlmState>,
) -> ItemOutcome {
    let tape = Tape::new();
    let u: Vec<_> = u_row.iter().map(|&v| tape.input(v)).collect();
    let eval = loss_kernel(&u, instance, cfg, tcfg, alm);
    let adjoints = tape.gradient(eval.loss);
    let grad_u = u.iter().map(|&v| adjoints.wrt(v)).collect();
    let relu_residuals: Vec<f64> = eval.relu_residuals.iter().map(|h| h.value()).collect();
    let correction_abs: Vec<f64> = eval.correction.iter().map(|d| d.value().abs()).collect();
    ItemOutcome {
        loss: eval.loss.value(),
        grad_u,
        max_violation: relu_residuals.iter().fold(0.0, |a, &h| a.max(h)),
        correction_sq_sum: correction_abs.iter().map(|d| d * d).sum(),
        relu_residuals,
        correction_abs,
    }
}

/// Loss and plan gradient of one supervised imitation item (closed-form).
fn supervised_outcome(
    u_row: &[f64],
    target: &[f64],
    mae: bool,
    instance: &ProblemInstance,
    cfg: &PlannerConfig,
) -> ItemOutcome {
    let m = u_row.len() as f64;
    let mut loss = 0.0;
    let mut grad_u = Vec::with_capacity(u_row.len());
    for (&u, &t) in u_row.iter().zip(target.iter()) {
        let e = u - t;
        if mae {
            loss += e.abs() / m;
            grad_u.push(e.signum() / m);
        } else {
            loss += e * e / m;
            grad_u.push(2.0 * e / m);
        }
    }
    // Violation diagnostics on the raw plan, value-only.
    let states = rollout_kernel([0.0; 3], u_row, cfg.dt, cfg.wheelbase);
    let relu_residuals = relu_residuals_kernel(&states, &instance.obstacles, cfg);
    ItemOutcome {
        loss,
        grad_u,
        max_violation: relu_residuals.iter().fold(0.0, |a, &h| a.max(h)),
        correction_sq_sum: 0.0,
        correction_abs: vec![0.0; u_row.len()],
        relu_residuals,
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Parameter-update rule with optional Adam moment buffers.
struct Optimizer {
    kind: OptimizerKind,
    steps: usize,
    moment_w: Vec<Array2<f64>>,
    moment_b: Vec<Array1<f64>>,
    second_w: Vec<Array2<f64>>,
    second_b: Vec<Array1<f64>>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, net: &PolicyNetwork) -> Self {
        let (weights, biases) = net.parameters();
        let zeros_w = || weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let zeros_b = || biases.iter().map(|b| Array1::zeros(b.dim())).collect();
        Optimizer {
            kind,
            steps: 0,
            moment_w: zeros_w(),
            moment_b: zeros_b(),
            second_w: zeros_w(),
            second_b: zeros_b(),
        }
    }

    fn step(&mut self, net: &mut PolicyNetwork, grads: &NetworkGradients, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => net.apply_update(grads, -lr),
            OptimizerKind::Adam => {
                self.steps += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
                let (weights, biases) = net.parameters_mut();
                for (((p, g), m), v) in weights
                    .iter_mut()
                    .zip(grads.weights.iter())
                    .zip(self.moment_w.iter_mut())
                    .zip(self.second_w.iter_mut())
                {
                    adam_update(
                        p.as_slice_mut().expect("standard layout"),
                        g.as_slice().expect("standard layout"),
                        m.as_slice_mut().expect("standard layout"),
                        v.as_slice_mut().expect("standard layout"),
                        lr,
                        bc1,
                        bc2,
                    );
                }
                for (((p, g), m), v) in biases
                    .iter_mut()
                    .zip(grads.biases.iter())
                    .zip(self.moment_b.iter_mut())
                    .zip(self.second_b.iter_mut())
                {
                    adam_update(
                        p.as_slice_mut().expect("standard layout"),
                        g.as_slice().expect("standard layout"),
                        m.as_slice_mut().expect("standard layout"),
                        v.as_slice_mut().expect("standard layout"),
                        lr,
                        bc1,
                        bc2,
                    );
                }
            }
        }
    }
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
    }
}

/// Trains the network in place on a set of instances. `targets` supplies
/// aligned flat solver plans and is required by the supervised methods.
/// Returns the per-epoch history; the run is bit-reproducible for a fixed
/// seed, instance set, and configuration.
pub fn train(
    net: &mut PolicyNetwork,
    instances: &[ProblemInstance],
    targets: Option<&[Vec<f64>]>,
    cfg: &PlannerConfig,
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    tcfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let input_dim = net.config().input_dim;
    let output_dim = net.config().output_dim;
    if output_dim != 2 * cfg.horizon {
        return Err(Error::ShapeMismatch {
            context: "network output vs planning horizon",
            expected: 2 * cfg.horizon,
            got: output_dim,
        });
    }
    let encodings: Vec<Vec<f64>> = instances.iter().map(encode_instance).collect();
    for enc in &encodings {
        if enc.len() != input_dim {
            return Err(Error::ShapeMismatch {
                context: "instance encoding vs network input",
                expected: input_dim,
                got: enc.len(),
            });
        }
    }
    let targets = if tcfg.method.needs_targets() {
        let t = targets.ok_or_else(|| {
            Error::Config(format!("method '{}' needs solver target plans", tcfg.method))
        })?;
        if t.len() != instances.len() {
            return Err(Error::ShapeMismatch {
                context: "targets vs training instances",
                expected: instances.len(),
                got: t.len(),
            });
        }
        for plan in t {
            if plan.len() != output_dim {
                return Err(Error::ShapeMismatch {
                    context: "target plan vs network output",
                    expected: output_dim,
                    got: plan.len(),
                });
            }
        }
        Some(t)
    } else {
        None
    };

    let n_obstacles = instances[0].obstacles.len();
    let n_residuals = cfg.horizon * n_obstacles;
    let mut alm = AlmState::new(n_residuals, output_dim, &tcfg.alm);
    let mut optimizer = Optimizer::new(tcfg.optimizer, net);
    let mut report = TrainReport { method: tcfg.method, seed: tcfg.seed, epochs: Vec::new() };

    net.set_training(true);
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = stream(tcfg.seed, STREAM_SHUFFLE, &[epoch as u64]);
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut h_sum = 0.0;
        let mut h_entries = 0usize;
        let mut max_violation = 0.0_f64;
        let mut correction_sq_sum = 0.0;
        let mut correction_abs_sum = 0.0;
        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut batch = Array2::zeros((b, input_dim));
            for (row, &idx) in chunk.iter().enumerate() {
                batch.row_mut(row).assign(&Array1::from_vec(encodings[idx].clone()));
            }
            let mut dropout_rng = stream(tcfg.seed, STREAM_DROPOUT, &[epoch as u64, step as u64]);
            let (u, trace) = net.forward_recorded(batch.view(), cfg, &mut dropout_rng)?;
            let rows: Vec<Vec<f64>> =
                (0..b).map(|i| u.row(i).iter().copied().collect()).collect();

            let eval_item = |(i, &idx): (usize, &usize)| -> ItemOutcome {
                let instance = &instances[idx];
                match tcfg.method {
                    TrainMethod::Mse | TrainMethod::Mae => supervised_outcome(
                        &rows[i],
                        &targets.expect("validated above")[idx],
                        tcfg.method == TrainMethod::Mae,
                        instance,
                        cfg,
                    ),
                    _ => tape_outcome(&rows[i], instance, cfg, tcfg, Some(&alm)),
                }
            };
            #[cfg(feature = "parallel")]
            let outcomes: Vec<ItemOutcome> =
                chunk.par_iter().enumerate().map(eval_item).collect();
            #[cfg(not(feature = "parallel"))]
            let outcomes: Vec<ItemOutcome> = chunk.iter().enumerate().map(eval_item).collect();

            let finite = outcomes
                .iter()
                .all(|o| o.loss.is_finite() && o.grad_u.iter().all(|g| g.is_finite()));
            if !finite {
                net.set_training(false);
                return Err(Error::TrainingDiverged { epoch, step, report: Box::new(report) });
            }

            let mut upstream = Array2::zeros((b, output_dim));
            let inv_b = 1.0 / b as f64;
            for (row, outcome) in outcomes.iter().enumerate() {
                for (col, &g) in outcome.grad_u.iter().enumerate() {
                    upstream[(row, col)] = g * inv_b;
                }
            }
            let grads = net.backward(&trace, upstream.view(), cfg);
            optimizer.step(net, &grads, tcfg.learning_rate);

            if tcfg.method.uses_alm() {
                let mut mean_h = vec![0.0; n_residuals];
                for outcome in &outcomes {
                    for (acc, &h) in mean_h.iter_mut().zip(outcome.relu_residuals.iter()) {
                        *acc += h * inv_b;
                    }
                }
                let mean_du: Vec<f64> = if tcfg.method.uses_guide() {
                    let mut mean = vec![0.0; output_dim];
                    for outcome in &outcomes {
                        for (acc, &d) in mean.iter_mut().zip(outcome.correction_abs.iter()) {
                            *acc += d * inv_b;
                        }
                    }
                    mean
                } else {
                    Vec::new()
                };
                alm.update_multipliers(&mean_h, &mean_du);
            }

            for outcome in &outcomes {
                loss_sum += outcome.loss;
                h_sum += outcome.relu_residuals.iter().sum::<f64>();
                h_entries += outcome.relu_residuals.len();
                max_violation = max_violation.max(outcome.max_violation);
                correction_sq_sum += outcome.correction_sq_sum;
                correction_abs_sum += outcome.correction_abs.iter().sum::<f64>();
            }
        }

        let items = instances.len() as f64;
        let mean_violation = if h_entries > 0 { h_sum / h_entries as f64 } else { 0.0 };
        if tcfg.method.uses_alm() {
            let mean_guide = tcfg
                .method
                .uses_guide()
                .then(|| correction_abs_sum / (items * output_dim as f64));
            alm.end_epoch(mean_violation, mean_guide, &tcfg.alm);
        }
        report.epochs.push(EpochRow {
            epoch,
            loss: loss_sum / items,
            mean_violation,
            max_violation,
            mean_correction_sq: correction_sq_sum / items,
            mu_cbf: alm.mu_cbf,
            mu_guide: alm.mu_guide,
        });
    }
    net.set_training(false);
    Ok(report)
}
