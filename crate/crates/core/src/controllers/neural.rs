//! Inference of the recurrent actor: one LSTM embedder layer with no output
//! activation, a stack of ReLU dense layers, and a linear head producing a
//! mean and a log standard deviation per action channel.
//!
//! Tensors in a weight bundle: `lstm.W` (4H × in), `lstm.U` (4H × H),
//! `lstm.b` (4H), gate blocks ordered input, forget, cell, output;
//! `dense.{k}.W`, `dense.{k}.b`; `head.W` (4n × last), `head.b`. The first
//! 2n head outputs are means, the rest log standard deviations, both in
//! action-channel order (translation, rotation per device).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, WeightBundle};
use crate::env::{observation_len, Observation};
use crate::error::{Error, Result};
use crate::physics::{Action, MAX_ROTATION, MAX_TRANSLATION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetworkSpec {
    pub embedder_width: usize,
    pub hidden_layers: Vec<usize>,
    pub n_devices: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl PolicyNetworkSpec {
    pub fn new(embedder_width: usize, hidden_layers: Vec<usize>, n_devices: usize) -> Self {
        PolicyNetworkSpec {
            embedder_width,
            hidden_layers,
            n_devices,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedder_width == 0 || self.n_devices == 0 || self.hidden_layers.contains(&0) {
            return Err(Error::invalid("network widths and device count must be positive"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::invalid("log-std range is empty"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        observation_len(self.n_devices)
    }

    /// Action channels: translation and rotation per device.
    pub fn action_len(&self) -> usize {
        2 * self.n_devices
    }

    pub fn head_len(&self) -> usize {
        2 * self.action_len()
    }

    /// Expected `(name, [rows, cols])` of every tensor.
    pub fn tensor_shapes(&self) -> Vec<(String, [usize; 2])> {
        let h = self.embedder_width;
        let mut out = vec![
            ("lstm.W".to_string(), [4 * h, self.input_len()]),
            ("lstm.U".to_string(), [4 * h, h]),
            ("lstm.b".to_string(), [4 * h, 1]),
        ];
        let mut prev = h;
        for (k, &w) in self.hidden_layers.iter().enumerate() {
            out.push((format!("dense.{k}.W"), [w, prev]));
            out.push((format!("dense.{k}.b"), [w, 1]));
            prev = w;
        }
        out.push(("head.W".to_string(), [self.head_len(), prev]));
        out.push(("head.b".to_string(), [self.head_len(), 1]));
        out
    }

    /// Uniform weights in `[-scale, scale]`, mainly for tests and demos.
    pub fn random_weights(&self, seed: u64, scale: f64) -> WeightBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bundle = WeightBundle::default();
        for (name, [r, c]) in self.tensor_shapes() {
            bundle.insert(name, DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..=scale)));
        }
        bundle
    }

    pub fn zero_weights(&self) -> WeightBundle {
        let mut bundle = WeightBundle::default();
        for (name, [r, c]) in self.tensor_shapes() {
            bundle.insert(name, DMatrix::zeros(r, c));
        }
        bundle
    }
}

/// Weights checked against a network spec.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    spec: PolicyNetworkSpec,
    lstm_w: DMatrix<f64>,
    lstm_u: DMatrix<f64>,
    lstm_b: DVector<f64>,
    dense: Vec<(DMatrix<f64>, DVector<f64>)>,
    head_w: DMatrix<f64>,
    head_b: DVector<f64>,
}

impl NetworkWeights {
    pub fn from_bundle(spec: &PolicyNetworkSpec, bundle: &WeightBundle) -> Result<Self> {
        spec.validate()?;
        for (name, [r, c]) in spec.tensor_shapes() {
            let m = bundle
                .get(&name)
                .ok_or_else(|| Error::format(0, format!("weight bundle lacks layer {name}")))?;
            if m.shape() != (r, c) {
                return Err(Error::format(
                    0,
                    format!("layer {name}: expected {r}x{c}, bundle has {}x{}", m.nrows(), m.ncols()),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {name} has non-finite weights")));
            }
        }
        let get = |n: &str| bundle.get(n).expect("checked").clone();
        let vec = |n: &str| DVector::from_column_slice(bundle.get(n).expect("checked").as_slice());
        Ok(NetworkWeights {
            spec: spec.clone(),
            lstm_w: get("lstm.W"),
            lstm_u: get("lstm.U"),
            lstm_b: vec("lstm.b"),
            dense: (0..spec.hidden_layers.len())
                .map(|k| (get(&format!("dense.{k}.W")), vec(&format!("dense.{k}.b"))))
                .collect(),
            head_w: get("head.W"),
            head_b: vec("head.b"),
        })
    }

    pub fn spec(&self) -> &PolicyNetworkSpec {
        &self.spec
    }
}

/// Hidden and cell state of the embedder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(width: usize) -> Self {
        LstmState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    /// `exp` of the clamped log standard deviation.
    pub std: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One forward pass; returns the head outputs and the next recurrent state.
pub fn neural_forward(
    weights: &NetworkWeights,
    observation: &[f64],
    state: &LstmState,
) -> Result<(PolicyOutput, LstmState)> {
    let spec = &weights.spec;
    let hw = spec.embedder_width;
    if observation.len() != spec.input_len() {
        return Err(Error::invalid(format!(
            "network expects {} inputs, got {}",
            spec.input_len(),
            observation.len()
        )));
    }
    if state.h.len() != hw || state.c.len() != hw {
        return Err(Error::invalid(format!("recurrent state width must be {hw}")));
    }
    if observation.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("observation contains non-finite values"));
    }
    let x = DVector::from_column_slice(observation);
    let h = DVector::from_column_slice(&state.h);
    let z = &weights.lstm_w * x + &weights.lstm_u * h + &weights.lstm_b;
    let mut c_next = vec![0.0; hw];
    let mut h_next = vec![0.0; hw];
    for j in 0..hw {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hw + j]);
        let g = z[2 * hw + j].tanh();
        let o = sigmoid(z[3 * hw + j]);
        c_next[j] = f * state.c[j] + i * g;
        h_next[j] = o * c_next[j].tanh();
    }
    let mut a = DVector::from_column_slice(&h_next);
    for (w, b) in &weights.dense {
        a = (w * a + b).map(|v| v.max(0.0));
    }
    let out = &weights.head_w * a + &weights.head_b;
    let n = spec.action_len();
    let mean = out.rows(0, n).iter().copied().collect();
    let std = out
        .rows(n, n)
        .iter()
        .map(|v| v.clamp(spec.log_std_min, spec.log_std_max).exp())
        .collect();
    Ok((PolicyOutput { mean, std }, LstmState { h: h_next, c: c_next }))
}

/// Squashes pre-activation values with `tanh` and scales them to the limits.
fn squash(values: &[f64]) -> Action {
    let flat: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, v)| v.tanh() * if k % 2 == 0 { MAX_TRANSLATION } else { MAX_ROTATION })
        .collect();
    Action::from_flat(&flat).expect("even, non-empty channel count")
}

/// The actor network as a policy; the recurrent state lives in the policy
/// and is cleared on reset.
pub struct NeuralPolicy {
    weights: Arc<NetworkWeights>,
    state: LstmState,
    deterministic: bool,
    seed: u64,
    rng: ChaCha8Rng,
}

impl NeuralPolicy {
    pub fn new(weights: Arc<NetworkWeights>, deterministic: bool, seed: u64) -> Self {
        let width = weights.spec.embedder_width;
        NeuralPolicy {
            weights,
            state: LstmState::zeros(width),
            deterministic,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> &LstmState {
        &self.state
    }

    pub fn set_state(&mut self, state: LstmState) {
        self.state = state;
    }

    /// Action for a flattened observation.
    pub fn act_flat(&mut self, observation: &[f64]) -> Result<Action> {
        let (out, next) = neural_forward(&self.weights, observation, &self.state)?;
        self.state = next;
        if self.deterministic {
            return Ok(squash(&out.mean));
        }
        let sample: Vec<f64> = out
            .mean
            .iter()
            .zip(&out.std)
            .map(|(m, s)| m + s * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(squash(&sample))
    }
}

impl Policy for NeuralPolicy {
    fn reset(&mut self, seed: u64) {
        self.state = LstmState::zeros(self.weights.spec.embedder_width);
        self.rng = ChaCha8Rng::seed_from_u64(crate::geom::mix_seed(self.seed, seed));
    }

    fn act(&mut self, observation: &Observation, _ctx: &PolicyContext<'_>) -> Result<Action> {
        self.act_flat(&observation.flatten())
    }
}
