//! Policy network mapping a problem encoding to a control plan.
//!
//! The network is a plain MLP: a stack of constraint-optimization layers
//! (linear → ReLU → dropout) followed by a linear head whose tanh output is
//! mapped affinely into the control box, so raw outputs always satisfy the
//! bounds. The forward/backward pair is hand-written over batched matrices;
//! training records a [`ForwardTrace`] and pushes the loss gradient of the
//! plan back to per-parameter gradients.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::ProblemInstance;
use crate::files::{read_bytes, write_atomic};
use crate::rng::{stream, STREAM_INIT};
use crate::vehicle::{ControlSequence, PlannerConfig};
use crate::{Error, Result};

/// Architecture of the policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of hidden constraint-optimization layers (default 5).
    pub hidden_layers: usize,
    /// Width of each hidden layer (default 256).
    pub hidden_dim: usize,
    /// Dropout probability inside each hidden layer (default 0.3).
    pub dropout: f64,
    /// Input size: 3 goal components plus 3 per obstacle.
    pub input_dim: usize,
    /// Output size: two controls per planning step.
    pub output_dim: usize,
}

impl NetworkConfig {
    /// Architecture sized for a problem family (horizon and obstacle count).
    pub fn for_problem(horizon: usize, n_obstacles: usize) -> Self {
        NetworkConfig {
            hidden_layers: 5,
            hidden_dim: 256,
            dropout: 0.3,
            input_dim: 3 + 3 * n_obstacles,
            output_dim: 2 * horizon,
        }
    }

    /// Checks internal consistency; call once on externally supplied configs.
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.output_dim == 0 || self.output_dim % 2 != 0 {
            return Err(Error::Config("output_dim must be a positive even number".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Sizes `(fan_in, fan_out)` of every linear layer, head included.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_dim));
            fan_in = self.hidden_dim;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

/// Flattens an instance into the network input layout:
/// `[goal_x, goal_y, goal_yaw, obs0_x, obs0_y, obs0_r, obs1_x, …]`.
pub fn encode_instance(instance: &ProblemInstance) -> Vec<f64> {
    let mut enc = Vec::with_capacity(3 + 3 * instance.obstacles.len());
    enc.extend_from_slice(&instance.goal.as_array());
    for o in &instance.obstacles {
        enc.push(o.x);
        enc.push(o.y);
        enc.push(o.radius);
    }
    enc
}

/// MLP with per-layer weights `W` (fan_in × fan_out) and biases.
#[derive(Debug, Clone)]
pub struct PolicyNetwork {
    config: NetworkConfig,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    train_mode: bool,
}

/// Per-parameter gradients produced by [`PolicyNetwork::backward`].
#[derive(Debug, Clone)]
pub struct NetworkGradients {
    /// Weight gradients, one per linear layer (head last).
    pub weights: Vec<Array2<f64>>,
    /// Bias gradients, one per linear layer (head last).
    pub biases: Vec<Array1<f64>>,
}

/// Intermediate activations recorded during a training forward pass.
pub struct ForwardTrace {
    /// Input of each linear layer (`hidden_layers + 1` entries).
    layer_inputs: Vec<Array2<f64>>,
    /// Post-ReLU, pre-dropout activations of each hidden layer.
    relu_outputs: Vec<Array2<f64>>,
    /// Scaled dropout masks (entries 0 or `1/(1−p)`); `None` when inactive.
    drop_masks: Vec<Option<Array2<f64>>>,
    /// Tanh of the head outputs.
    tanh_out: Array2<f64>,
}

impl PolicyNetwork {
    /// Fresh network with uniform `±1/√fan_in` weights and biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (layer, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            let mut rng = stream(seed, STREAM_INIT, &[layer as u64]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound));
            let b = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..=bound));
            weights.push(w);
            biases.push(b);
        }
        Ok(PolicyNetwork { config, weights, biases, train_mode: false })
    }

    /// Architecture of this network.
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Enables or disables training mode (gates dropout in recorded passes).
    pub fn set_training(&mut self, on: bool) {
        self.train_mode = on;
    }

    /// Total number of parameters.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Evaluation forward pass for one instance encoding (dropout inactive).
    pub fn forward(&self, encoding: &[f64], cfg: &PlannerConfig) -> Result<ControlSequence> {
        if encoding.len() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.config.input_dim,
                got: encoding.len(),
            });
        }
        let x = Array2::from_shape_vec((1, encoding.len()), encoding.to_vec()).expect("shape");
        let (u, _) = self.forward_batch(x.view(), cfg, None);
        ControlSequence::from_flat(u.row(0).as_slice().expect("contiguous"))
    }

    /// Evaluation forward pass for a whole batch of instance encodings, one
    /// per row (dropout inactive).  Streams each weight matrix once for the
    /// batch, which is much faster per instance than repeated single-row
    /// passes.
    pub fn forward_many(
        &self,
        batch: ArrayView2<'_, f64>,
        cfg: &PlannerConfig,
    ) -> Result<Vec<ControlSequence>> {
        if batch.ncols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.config.input_dim,
                got: batch.ncols(),
            });
        }
        let (u, _) = self.forward_batch(batch, cfg, None);
        u.rows()
            .into_iter()
            .map(|row| ControlSequence::from_flat(row.as_slice().expect("contiguous")))
            .collect()
    }

    /// Evaluation forward pass over whole instances: encodes each one and
    /// plans the batch in a single pass.
    pub fn forward_instances(
        &self,
        instances: &[ProblemInstance],
        cfg: &PlannerConfig,
    ) -> Result<Vec<ControlSequence>> {
        let mut flat = Vec::with_capacity(instances.len() * self.config.input_dim);
        for inst in instances {
            let enc = encode_instance(inst);
            if enc.len() != self.config.input_dim {
                return Err(Error::ShapeMismatch {
                    context: "network input",
                    expected: self.config.input_dim,
                    got: enc.len(),
                });
            }
            flat.extend_from_slice(&enc);
        }
        let batch = Array2::from_shape_vec((instances.len(), self.config.input_dim), flat)
            .expect("validated shapes");
        self.forward_many(batch.view(), cfg)
    }

    /// Training forward pass over a batch, recording everything backward
    /// needs. Dropout masks are sampled from `rng` only in training mode.
    pub fn forward_recorded(
        &self,
        batch: ArrayView2<'_, f64>,
        cfg: &PlannerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, ForwardTrace)> {
        if batch.ncols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.config.input_dim,
                got: batch.ncols(),
            });
        }
        let (u, trace) = self.forward_batch(batch, cfg, Some(rng));
        Ok((u, trace.expect("recorded pass returns a trace")))
    }

    /// Shared forward pass; records a trace when `rng` is provided.
    fn forward_batch(
        &self,
        batch: ArrayView2<'_, f64>,
        cfg: &PlannerConfig,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, Option<ForwardTrace>) {
        let record = rng.is_some();
        let mut layer_inputs = Vec::new();
        let mut relu_outputs = Vec::new();
        let mut drop_masks = Vec::new();
        let mut a = batch.to_owned();
        for l in 0..self.config.hidden_layers {
            if record {
                layer_inputs.push(a.clone());
            }
            let mut h = a.dot(&self.weights[l]) + &self.biases[l];
            h.mapv_inplace(|z| z.max(0.0));
            let dropped = if self.train_mode && self.config.dropout > 0.0 {
                let rng = rng.as_deref_mut().expect("training pass needs an rng");
                let keep_scale = 1.0 / (1.0 - self.config.dropout);
                let mask = Array2::from_shape_fn(h.dim(), |_| {
                    if rng.gen::<f64>() < self.config.dropout {
                        0.0
                    } else {
                        keep_scale
                    }
                });
                let out = &h * &mask;
                if record {
                    drop_masks.push(Some(mask));
                }
                out
            } else {
                if record {
                    drop_masks.push(None);
                }
                h.clone()
            };
            if record {
                relu_outputs.push(h);
            }
            a = dropped;
        }
        if record {
            layer_inputs.push(a.clone());
        }
        let head = self.weights.len() - 1;
        let mut y = a.dot(&self.weights[head]) + &self.biases[head];
        y.mapv_inplace(f64::tanh);
        let tanh_out = y;
        let mut u = tanh_out.clone();
        for (j, mut col) in u.axis_iter_mut(Axis(1)).enumerate() {
            let lo = cfg.flat_min(j);
            let hi = cfg.flat_max(j);
            col.mapv_inplace(|t| lo + (t + 1.0) * 0.5 * (hi - lo));
        }
        let trace = record.then_some(ForwardTrace { layer_inputs, relu_outputs, drop_masks, tanh_out });
        (u, trace)
    }

    /// Gradients of a scalar loss given `∂loss/∂u` for the batch plans `u`
    /// produced by the recorded pass.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
        cfg: &PlannerConfig,
    ) -> NetworkGradients {
        let head = self.weights.len() - 1;
        // Through the box map and the tanh: du/dy = (hi−lo)/2 · (1 − t²).
        let mut delta = upstream.to_owned();
        for (j, mut col) in delta.axis_iter_mut(Axis(1)).enumerate() {
            let half_span = 0.5 * (cfg.flat_max(j) - cfg.flat_min(j));
            let t = trace.tanh_out.column(j);
            for (d, &tv) in col.iter_mut().zip(t.iter()) {
                *d *= half_span * (1.0 - tv * tv);
            }
        }
        let mut weight_grads = vec![Array2::zeros((0, 0)); self.weights.len()];
        let mut bias_grads = vec![Array1::zeros(0); self.biases.len()];
        weight_grads[head] = trace.layer_inputs[head].t().dot(&delta);
        bias_grads[head] = delta.sum_axis(Axis(0));
        let mut delta_a = delta.dot(&self.weights[head].t());
        for l in (0..self.config.hidden_layers).rev() {
            if let Some(mask) = &trace.drop_masks[l] {
                delta_a *= mask;
            }
            let relu = &trace.relu_outputs[l];
            delta_a.zip_mut_with(relu, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            weight_grads[l] = trace.layer_inputs[l].t().dot(&delta_a);
            bias_grads[l] = delta_a.sum_axis(Axis(0));
            if l > 0 {
                delta_a = delta_a.dot(&self.weights[l].t());
            }
        }
        NetworkGradients { weights: weight_grads, biases: bias_grads }
    }

    /// Applies a parameter update `p ← p + scale·g` in place.
    pub fn apply_update(&mut self, update: &NetworkGradients, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(update.weights.iter()) {
            w.zip_mut_with(g, |p, &u| *p += scale * u);
        }
        for (b, g) in self.biases.iter_mut().zip(update.biases.iter()) {
            b.zip_mut_with(g, |p, &u| *p += scale * u);
        }
    }

    /// Read-only access to the per-layer parameters (weights, biases).
    pub fn parameters(&self) -> (&[Array2<f64>], &[Array1<f64>]) {
        (&self.weights, &self.biases)
    }

    /// Mutable access to the per-layer parameters for optimizer updates.
    pub fn parameters_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SOMTPNET";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    network_config: NetworkConfig,
    planner_fingerprint: String,
    layer_dims: Vec<(usize, usize)>,
}

/// Writes a checkpoint: magic, JSON header, then row-major little-endian
/// `f64` weights and biases per layer. Round-trips are bit-exact.
pub fn save_checkpoint(path: &Path, net: &PolicyNetwork, cfg: &PlannerConfig) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        network_config: net.config.clone(),
        planner_fingerprint: format!("{:016x}", cfg.fingerprint()),
        layer_dims: net.config.layer_dims(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (w, b) in net.weights.iter().zip(net.biases.iter()) {
        for &v in w.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

/// Reads a checkpoint and verifies it matches the active planner config.
pub fn load_checkpoint(path: &Path, cfg: &PlannerConfig) -> Result<PolicyNetwork> {
    let bytes = read_bytes(path)?;
    let display = path.display().to_string();
    let corrupt = |reason: &str| Error::format(&display, format!("corrupt checkpoint: {reason}"));
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(corrupt("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &display,
            format!("unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})", header.version),
        ));
    }
    header.network_config.validate()?;
    if header.layer_dims != header.network_config.layer_dims() {
        return Err(corrupt("layer dims disagree with network config"));
    }
    let expected_fp = format!("{:016x}", cfg.fingerprint());
    if header.planner_fingerprint != expected_fp {
        return Err(Error::format(
            &display,
            format!(
                "planner config mismatch: checkpoint was trained for {}, active config is {}",
                header.planner_fingerprint, expected_fp
            ),
        ));
    }
    let param_count: usize = header
        .layer_dims
        .iter()
        .map(|(fi, fo)| fi * fo + fo)
        .sum();
    if bytes.len() != header_end + 8 * param_count {
        return Err(corrupt("payload size disagrees with layer dims"));
    }
    let mut offset = header_end;
    let mut next = || {
        let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"));
        offset += 8;
        v
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &(fan_in, fan_out) in &header.layer_dims {
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = next();
        }
        let mut b = Array1::zeros(fan_out);
        for v in b.iter_mut() {
            *v = next();
        }
        weights.push(w);
        biases.push(b);
    }
    Ok(PolicyNetwork { config: header.network_config, weights, biases, train_mode: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::Obstacle;
    use crate::vehicle::State;

    fn tiny_net(dropout: f64) -> (PolicyNetwork, PlannerConfig) {
        let mut cfg = PlannerConfig::default();
        cfg.horizon = 3;
        let net = PolicyNetwork::init(
            NetworkConfig {
                hidden_layers: 2,
                hidden_dim: 5,
                dropout,
                input_dim: 6,
                output_dim: 6,
            },
            9,
        )
        .unwrap();
        (net, cfg)
    }

    #[test]
    fn encoding_layout_is_goal_then_obstacles() {
        let inst = ProblemInstance {
            goal: State { x: 1.0, y: 2.0, yaw: 0.5 },
            obstacles: vec![
                Obstacle { x: -1.0, y: 0.25, radius: 0.4 },
                Obstacle { x: 2.0, y: -0.5, radius: 0.1 },
            ],
        };
        assert_eq!(
            encode_instance(&inst),
            vec![1.0, 2.0, 0.5, -1.0, 0.25, 0.4, 2.0, -0.5, 0.1]
        );
    }

    #[test]
    fn forward_outputs_stay_inside_the_control_box() {
        let (net, cfg) = tiny_net(0.0);
        for scale in [0.1, 1.0, 100.0] {
            let enc: Vec<f64> = (0..6).map(|i| scale * (i as f64 - 2.5)).collect();
            let u = net.forward(&enc, &cfg).unwrap();
            for (i, &v) in u.as_flat().iter().enumerate() {
                assert!(v >= cfg.flat_min(i) && v <= cfg.flat_max(i), "component {i}: {v}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_size() {
        let (net, cfg) = tiny_net(0.0);
        assert!(net.forward(&[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn forward_many_matches_row_by_row_forward() {
        let (net, cfg) = tiny_net(0.3);
        let batch = Array2::from_shape_fn((5, 6), |(i, j)| (i as f64 - 2.0) * 0.4 + j as f64 * 0.1);
        let many = net.forward_many(batch.view(), &cfg).unwrap();
        for (row, plan) in batch.rows().into_iter().zip(&many) {
            let single = net.forward(row.as_slice().unwrap(), &cfg).unwrap();
            assert_eq!(&single, plan);
        }
        assert!(net.forward_many(batch.slice(ndarray::s![.., ..4]), &cfg).is_err());
    }

    #[test]
    fn inference_is_deterministic_even_after_training_mode() {
        let (mut net, cfg) = tiny_net(0.5);
        let enc = vec![0.3; 6];
        let a = net.forward(&enc, &cfg).unwrap();
        net.set_training(true);
        net.set_training(false);
        let b = net.forward(&enc, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_masks_are_scaled_and_seeded() {
        let (mut net, cfg) = tiny_net(0.5);
        net.set_training(true);
        let batch = Array2::from_shape_fn((4, 6), |(i, j)| (i + j) as f64 * 0.1);
        let mut rng_a = stream(1, 99, &[]);
        let mut rng_b = stream(1, 99, &[]);
        let (ua, trace) = net.forward_recorded(batch.view(), &cfg, &mut rng_a).unwrap();
        let (ub, _) = net.forward_recorded(batch.view(), &cfg, &mut rng_b).unwrap();
        assert_eq!(ua, ub, "same rng stream must reproduce the pass");
        let mask = trace.drop_masks[0].as_ref().expect("dropout active");
        for &m in mask.iter() {
            assert!(m == 0.0 || (m - 2.0).abs() < 1e-15, "mask entry {m}");
        }
        let mut rng_c = stream(2, 99, &[]);
        let (uc, _) = net.forward_recorded(batch.view(), &cfg, &mut rng_c).unwrap();
        assert_ne!(ua, uc, "different rng stream should flip some masks");
    }

    #[test]
    fn backward_matches_finite_differences_on_every_parameter() {
        let (mut net, cfg) = tiny_net(0.0);
        net.set_training(true);
        let batch = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j) as f64).sin());
        // Scalar probe: weighted sum of the batch plans.
        let probe_weights = Array2::from_shape_fn((3, 6), |(i, j)| ((i + 2 * j) as f64).cos());
        let loss = |net: &PolicyNetwork| -> f64 {
            let mut rng = stream(0, 98, &[]);
            let (u, _) = net.forward_recorded(batch.view(), &cfg, &mut rng).unwrap();
            (&u * &probe_weights).sum()
        };
        let mut rng = stream(0, 98, &[]);
        let (_, trace) = net.forward_recorded(batch.view(), &cfg, &mut rng).unwrap();
        let grads = net.backward(&trace, probe_weights.view(), &cfg);

        let h = 1e-6;
        let layers = net.weights.len();
        for l in 0..layers {
            for idx in 0..net.weights[l].len() {
                let base = net.weights[l].as_slice_mut().unwrap()[idx];
                net.weights[l].as_slice_mut().unwrap()[idx] = base + h;
                let fp = loss(&net);
                net.weights[l].as_slice_mut().unwrap()[idx] = base - h;
                let fm = loss(&net);
                net.weights[l].as_slice_mut().unwrap()[idx] = base;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = grads.weights[l].as_slice().unwrap()[idx];
                assert!(
                    (analytic - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "weight layer {l} index {idx}: {analytic} vs {fd}"
                );
            }
            for idx in 0..net.biases[l].len() {
                let base = net.biases[l][idx];
                net.biases[l][idx] = base + h;
                let fp = loss(&net);
                net.biases[l][idx] = base - h;
                let fm = loss(&net);
                net.biases[l][idx] = base;
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (grads.biases[l][idx] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "bias layer {l} index {idx}"
                );
            }
        }
    }

    #[test]
    fn masked_units_receive_no_weight_gradient() {
        let (mut net, cfg) = tiny_net(0.6);
        net.set_training(true);
        let batch = Array2::from_shape_fn((2, 6), |(i, j)| 0.3 + (i + j) as f64 * 0.05);
        let mut rng = stream(5, 97, &[]);
        let (u, trace) = net.forward_recorded(batch.view(), &cfg, &mut rng).unwrap();
        let upstream = Array2::from_elem(u.dim(), 1.0);
        let grads = net.backward(&trace, upstream.view(), &cfg);
        // A unit dropped in every batch row contributes no gradient to its
        // incoming weights.
        let mask = trace.drop_masks[1].as_ref().unwrap();
        for unit in 0..mask.ncols() {
            if mask.column(unit).iter().all(|&m| m == 0.0) {
                for &g in grads.weights[1].column(unit).iter() {
                    assert_eq!(g, 0.0);
                }
                assert_eq!(grads.biases[1][unit], 0.0);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (net, cfg) = tiny_net(0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.somtp");
        save_checkpoint(&path, &net, &cfg).unwrap();
        let loaded = load_checkpoint(&path, &cfg).unwrap();
        assert_eq!(loaded.config, net.config);
        for (a, b) in net.weights.iter().zip(loaded.weights.iter()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (a, b) in net.biases.iter().zip(loaded.biases.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_guards_against_truncation_and_mismatch() {
        let (net, cfg) = tiny_net(0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.somtp");
        save_checkpoint(&path, &net, &cfg).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.somtp");
        std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&cut, &cfg).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");

        let garbled = dir.path().join("garbled.somtp");
        std::fs::write(&garbled, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&garbled, &cfg).is_err());

        let mut other_cfg = cfg.clone();
        other_cfg.horizon = 7;
        let err = load_checkpoint(&path, &other_cfg).unwrap_err();
        assert!(err.to_string().contains("planner config mismatch"), "{err}");
    }

    #[test]
    fn init_is_seeded() {
        let (a, _) = tiny_net(0.0);
        let (b, _) = tiny_net(0.0);
        for (x, y) in a.weights.iter().zip(b.weights.iter()) {
            assert_eq!(x, y);
        }
        let c = PolicyNetwork::init(a.config.clone(), 10).unwrap();
        assert_ne!(a.weights[0], c.weights[0]);
    }
}
