//! Advantage actor-critic agent with a hybrid quantum or classical critic.
//!
//! The network is `encoder → LSTM → {actor, critic}`. The encoder is two
//! tanh dense layers over the observation features; the LSTM input is the
//! encoder output followed by four scalars (previous reward, car velocity x
//! and y, previous speed action). The critic is either a QIDEP circuit with
//! a linear readout or `Dense → LayerNorm → tanh → Dense`.
//!
//! Training runs one episode, computes discounted returns, backpropagates
//! `J_V − J_π` through time and takes one Adam step.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path as FsPath;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{smooth_curve, ValueModel};
use crate::env::costmap::CostMap;
use crate::env::planner::{plan_path, Path};
use crate::env::scenes::{scene_cost_map, Scene};
use crate::env::{reset_with, EnvConfig, Observation, Outcome, RewardBreakdown, SpeedAction, WorldState, KMH};
use crate::error::{config_err, NavqError, Result};
use crate::nn::{softmax_entropy, tanh_backward, tanh_vec, AdamConfig, AdamState, Dense, LayerNorm, LayerNormCache, LstmCache, LstmCell};
use crate::qidep::{build_circuit, pad_input, plan_layout, prescale, EncodingAxes, QidepLayout};
use crate::qsim::{backprop_gradient, param_shift_full, readout, run_circuit, Circuit, NoiseSpec};
use crate::rng::{substream, Stream, StreamRng};

pub const NUM_ACTIONS: usize = 3;
/// Scalars appended to the encoder output before the LSTM.
pub const LSTM_EXTRAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Reverse-mode differentiation through the simulated state.
    #[default]
    BackpropSim,
    ParameterShift,
}

/// Sign of the entropy term in the policy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// Maximize `−Σ π log π` (exploration bonus).
    #[default]
    Bonus,
    /// Maximize `Σ π log π` as the loss is literally written.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticConfig {
    Quantum {
        qubits: usize,
        layers: usize,
        #[serde(default)]
        noise: NoiseSpec,
        #[serde(default)]
        axes: EncodingAxes,
        /// Clamp hidden features to [−1, 1] and scale by π before encoding.
        #[serde(default)]
        prescale: bool,
    },
    Classical {
        #[serde(default = "d_classical_hidden")]
        hidden: usize,
    },
}

fn d_classical_hidden() -> usize {
    64
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig::Quantum { qubits: 4, layers: 2, noise: NoiseSpec::none(), axes: EncodingAxes::Zyz, prescale: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_entropy_beta")]
    pub entropy_beta: f64,
    #[serde(default)]
    pub entropy_sign: EntropySign,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    /// LSTM hidden size; also the critic input size.
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_encoder_hidden")]
    pub encoder_hidden: usize,
    #[serde(default = "d_encoder_out")]
    pub encoder_out: usize,
    #[serde(default)]
    pub gradient_mode: GradientMode,
    /// Multiplies rewards before returns are formed (critic targets are in
    /// scaled units; recorded returns are not).
    #[serde(default = "d_reward_scale")]
    pub reward_scale: f64,
    /// Global L2 clip on the per-episode gradient.
    #[serde(default = "d_max_grad_norm")]
    pub max_grad_norm: Option<f64>,
    /// Trailing window of the smoothed return column.
    #[serde(default = "d_smoothing")]
    pub smoothing_window: usize,
}

fn d_gamma() -> f64 {
    0.99
}
fn d_entropy_beta() -> f64 {
    0.01
}
fn d_lr() -> f64 {
    0.0005
}
fn d_max_steps() -> usize {
    500
}
fn d_episodes() -> usize {
    300
}
fn d_hidden() -> usize {
    32
}
fn d_encoder_hidden() -> usize {
    64
}
fn d_encoder_out() -> usize {
    28
}
fn d_reward_scale() -> f64 {
    0.01
}
fn d_max_grad_norm() -> Option<f64> {
    Some(1.0)
}
fn d_smoothing() -> usize {
    100
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            critic: CriticConfig::default(),
            gamma: d_gamma(),
            entropy_beta: d_entropy_beta(),
            entropy_sign: EntropySign::default(),
            lr: d_lr(),
            max_steps: d_max_steps(),
            episodes: d_episodes(),
            seed: 0,
            hidden_dim: d_hidden(),
            encoder_hidden: d_encoder_hidden(),
            encoder_out: d_encoder_out(),
            gradient_mode: GradientMode::default(),
            reward_scale: d_reward_scale(),
            max_grad_norm: d_max_grad_norm(),
            smoothing_window: d_smoothing(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return config_err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.entropy_beta >= 0.0) {
            return config_err(format!("entropy_beta must be >= 0, got {}", self.entropy_beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("lr must be positive, got {}", self.lr));
        }
        if self.max_steps == 0 || self.hidden_dim == 0 || self.encoder_hidden == 0 || self.encoder_out == 0 {
            return config_err("max_steps and layer sizes must be >= 1");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return config_err("reward_scale must be positive");
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return config_err("max_grad_norm must be positive");
            }
        }
        if self.smoothing_window == 0 {
            return config_err("smoothing_window must be >= 1");
        }
        match &self.critic {
            CriticConfig::Quantum { qubits, layers, noise, .. } => {
                plan_layout(self.hidden_dim, *qubits, *layers)?;
                noise.validate()?;
            }
            CriticConfig::Classical { hidden } => {
                if *hidden == 0 {
                    return config_err("classical critic hidden size must be >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    /// QIDEP layout of the quantum critic, if any.
    pub fn layout(&self) -> Result<Option<QidepLayout>> {
        match &self.critic {
            CriticConfig::Quantum { qubits, layers, axes, .. } => {
                Ok(Some(plan_layout(self.hidden_dim, *qubits, *layers)?.with_axes(*axes)))
            }
            CriticConfig::Classical { .. } => Ok(None),
        }
    }
}

// ---------------------------------------------------------------------------
// critics

/// `Dense(p→h) → LayerNorm(h) → tanh → Dense(h→1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalCritic {
    pub dense0: Dense,
    pub norm: LayerNorm,
    pub dense1: Dense,
}

#[derive(Debug, Clone)]
pub struct ClassicalCache {
    norm: LayerNormCache,
    act: Vec<f64>,
}

impl ClassicalCritic {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        ClassicalCritic { dense0: Dense::new(input_dim, hidden, rng), norm: LayerNorm::new(hidden), dense1: Dense::new(hidden, 1, rng) }
    }

    pub fn num_params(&self) -> usize {
        self.dense0.num_params() + self.norm.num_params() + self.dense1.num_params()
    }

    fn forward(&self, h: &[f64]) -> Result<(f64, ClassicalCache)> {
        let a = self.dense0.forward(h)?;
        let (n, norm) = self.norm.forward(&a)?;
        let act = tanh_vec(&n);
        let v = self.dense1.forward_unchecked(&act)[0];
        Ok((v, ClassicalCache { norm, act }))
    }

    fn backward(&self, h: &[f64], cache: &ClassicalCache, dv: f64, grad: &mut [f64]) -> Vec<f64> {
        let (g0, rest) = grad.split_at_mut(self.dense0.num_params());
        let (gn, g1) = rest.split_at_mut(self.norm.num_params());
        let dact = self.dense1.backward(&cache.act, &[dv], g1);
        let dn = tanh_backward(&cache.act, &dact);
        let da = self.norm.backward(&cache.norm, &dn, gn);
        self.dense0.backward(h, &da, g0)
    }
}

/// QIDEP circuit with readout `V = b + Σ w_i ⟨Z_i⟩`. Parameters are stored
/// flat as `θ | w | b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridCritic {
    pub layout: QidepLayout,
    circuit: Circuit,
    params: Vec<f64>,
    pub noise: NoiseSpec,
    pub prescale: bool,
}

impl HybridCritic {
    pub fn new<R: Rng + ?Sized>(layout: QidepLayout, noise: NoiseSpec, prescale: bool, rng: &mut R) -> Result<Self> {
        noise.validate()?;
        let n = layout.n_qubits;
        let mut params: Vec<f64> = (0..layout.pqc_param_count).map(|_| rng.gen_range(-PI..PI)).collect();
        let limit = (6.0 / (n as f64 + 1.0)).sqrt();
        params.extend((0..n).map(|_| rng.gen_range(-limit..limit)));
        params.push(0.0);
        Ok(HybridCritic { layout, circuit: build_circuit(&layout), params, noise, prescale })
    }

    pub fn from_params(layout: QidepLayout, noise: NoiseSpec, prescale: bool, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.critic_param_count() {
            return Err(NavqError::Input(format!(
                "hybrid critic expects {} parameters, got {}",
                layout.critic_param_count(),
                params.len()
            )));
        }
        Ok(HybridCritic { layout, circuit: build_circuit(&layout), params, noise, prescale })
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }
    pub fn num_params(&self) -> usize {
        self.params.len()
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn theta(&self) -> &[f64] {
        &self.params[..self.layout.pqc_param_count]
    }
    pub fn weights(&self) -> &[f64] {
        &self.params[self.layout.pqc_param_count..self.params.len() - 1]
    }
    pub fn bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Padded circuit input and `∂x/∂h` for each hidden entry.
    fn encode(&self, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if h.len() != self.layout.p {
            return config_err(format!("critic expects a {}-dim hidden state, got {}", self.layout.p, h.len()));
        }
        let mut x = pad_input(h, &self.layout)?;
        let mut dx = vec![1.0; h.len()];
        if self.prescale {
            for (i, v) in x.iter_mut().take(h.len()).enumerate() {
                let (s, d) = prescale(*v);
                *v = s;
                dx[i] = d;
            }
        }
        Ok((x, dx))
    }

    pub fn value<R: Rng + ?Sized>(&self, h: &[f64], rng: &mut R) -> Result<f64> {
        let (x, _) = self.encode(h)?;
        let exps = run_circuit(&self.circuit, &x, self.theta(), &self.noise, rng)?;
        Ok(readout(&exps, self.weights(), self.bias()))
    }

    /// Value, `∂V/∂params` (flat) and `∂V/∂h`.
    pub fn value_and_gradients<R: Rng + ?Sized>(&self, h: &[f64], mode: GradientMode, rng: &mut R) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (x, dx) = self.encode(h)?;
        let g = match mode {
            GradientMode::BackpropSim => backprop_gradient(&self.circuit, &x, self.theta(), self.weights(), self.bias(), &self.noise, rng)?,
            GradientMode::ParameterShift => param_shift_full(&self.circuit, &x, self.theta(), self.weights(), self.bias(), &self.noise, rng)?,
        };
        let mut dp = g.d_params.clone();
        dp.extend_from_slice(g.d_weights());
        dp.push(1.0);
        let dh = dx.iter().zip(&g.d_features).map(|(a, b)| a * b).collect();
        Ok((g.value, dp, dh))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Quantum(HybridCritic),
    Classical(ClassicalCritic),
}

#[derive(Debug, Clone)]
pub enum CriticCache {
    Classical(ClassicalCache),
    Quantum { d_params: Vec<f64>, d_input: Vec<f64> },
    /// Forward-only evaluation; no gradient is available.
    None,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        Ok(match &cfg.critic {
            CriticConfig::Quantum { noise, prescale, .. } => {
                let layout = cfg.layout()?.expect("quantum layout");
                Critic::Quantum(HybridCritic::new(layout, *noise, *prescale, rng)?)
            }
            CriticConfig::Classical { hidden } => Critic::Classical(ClassicalCritic::new(cfg.hidden_dim, *hidden, rng)),
        })
    }

    pub fn num_params(&self) -> usize {
        match self {
            Critic::Quantum(q) => q.num_params(),
            Critic::Classical(c) => c.num_params(),
        }
    }

    fn param_blocks(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Critic::Quantum(q) => vec![
                ("critic.theta", vec![q.layout.pqc_param_count]),
                ("critic.readout.weight", vec![q.layout.n_qubits]),
                ("critic.readout.bias", vec![1]),
            ],
            Critic::Classical(c) => {
                let (i, h) = (c.dense0.in_dim(), c.dense0.out_dim());
                vec![
                    ("critic.dense0.weight", vec![h, i]),
                    ("critic.dense0.bias", vec![h]),
                    ("critic.norm.gain", vec![h]),
                    ("critic.norm.bias", vec![h]),
                    ("critic.dense1.weight", vec![1, h]),
                    ("critic.dense1.bias", vec![1]),
                ]
            }
        }
    }

    fn params_into(&self, out: &mut Vec<f64>) {
        match self {
            Critic::Quantum(q) => out.extend_from_slice(q.params()),
            Critic::Classical(c) => {
                out.extend_from_slice(c.dense0.params());
                out.extend_from_slice(c.norm.params());
                out.extend_from_slice(c.dense1.params());
            }
        }
    }

    pub fn set_params(&mut self, p: &[f64]) {
        match self {
            Critic::Quantum(q) => q.params_mut().copy_from_slice(p),
            Critic::Classical(c) => {
                let (a, rest) = p.split_at(c.dense0.num_params());
                let (b, d) = rest.split_at(c.norm.num_params());
                c.dense0.params_mut().copy_from_slice(a);
                c.norm.params_mut().copy_from_slice(b);
                c.dense1.params_mut().copy_from_slice(d);
            }
        }
    }

    /// Critic value for a hidden vector. Noise (quantum) draws from `rng`.
    pub fn value<R: Rng + ?Sized>(&self, h: &[f64], rng: &mut R) -> Result<f64> {
        match self {
            Critic::Quantum(q) => q.value(h, rng),
            Critic::Classical(c) => Ok(c.forward(h)?.0),
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, h: &[f64], mode: GradientMode, rng: &mut R) -> Result<(f64, CriticCache)> {
        match self {
            Critic::Quantum(q) => {
                let (v, d_params, d_input) = q.value_and_gradients(h, mode, rng)?;
                Ok((v, CriticCache::Quantum { d_params, d_input }))
            }
            Critic::Classical(c) => {
                let (v, cache) = c.forward(h)?;
                Ok((v, CriticCache::Classical(cache)))
            }
        }
    }

    /// Accumulates `dv · ∂V/∂params` into `grad` and returns `dv · ∂V/∂h`.
    pub fn backward(&self, h: &[f64], cache: &CriticCache, dv: f64, grad: &mut [f64]) -> Result<Vec<f64>> {
        match (self, cache) {
            (Critic::Quantum(_), CriticCache::Quantum { d_params, d_input }) => {
                for (g, d) in grad.iter_mut().zip(d_params) {
                    *g += dv * d;
                }
                Ok(d_input.iter().map(|d| dv * d).collect())
            }
            (Critic::Classical(c), CriticCache::Classical(cache)) => Ok(c.backward(h, cache, dv, grad)),
            _ => Err(NavqError::Usage("critic cache does not match the critic".into())),
        }
    }
}

impl ValueModel for Critic {
    fn num_params(&self) -> usize {
        Critic::num_params(self)
    }

    fn input_dim(&self) -> usize {
        match self {
            Critic::Quantum(q) => q.layout.p,
            Critic::Classical(c) => c.dense0.in_dim(),
        }
    }

    /// Quantum angles from U(−π, π); readout and classical weights from U(−1, 1).
    fn sample_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let n_angles = match self {
            Critic::Quantum(q) => q.layout.pqc_param_count,
            Critic::Classical(_) => 0,
        };
        (0..self.num_params()).map(|i| if i < n_angles { rng.gen_range(-PI..PI) } else { rng.gen_range(-1.0..1.0) }).collect()
    }

    fn value_gradient(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.num_params() {
            return Err(NavqError::Input("parameter vector has the wrong length".into()));
        }
        let mut model = self.clone();
        model.set_params(params);
        if let Critic::Quantum(q) = &mut model {
            q.noise = NoiseSpec::none();
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (_, cache) = model.forward(x, GradientMode::BackpropSim, &mut rng)?;
        let mut grad = vec![0.0; params.len()];
        model.backward(x, &cache, 1.0, &mut grad)?;
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// actor-critic network

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub encoder0: Dense,
    pub encoder1: Dense,
    pub lstm: LstmCell,
    pub actor: Dense,
    pub critic: Critic,
}

/// Activations of one policy step.
#[derive(Debug, Clone)]
pub struct StepForward {
    pub features: Vec<f64>,
    pub extras: [f64; LSTM_EXTRAS],
    pub enc0: Vec<f64>,
    pub enc1: Vec<f64>,
    pub lstm_cache: LstmCache,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, obs_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(ActorCritic {
            encoder0: Dense::new(obs_dim, cfg.encoder_hidden, rng),
            encoder1: Dense::new(cfg.encoder_hidden, cfg.encoder_out, rng),
            lstm: LstmCell::new(cfg.encoder_out + LSTM_EXTRAS, cfg.hidden_dim, rng),
            actor: Dense::new(cfg.hidden_dim, NUM_ACTIONS, rng),
            critic: Critic::new(cfg, rng)?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder0.in_dim()
    }

    fn block_sizes(&self) -> [usize; 5] {
        [
            self.encoder0.num_params(),
            self.encoder1.num_params(),
            self.lstm.num_params(),
            self.actor.num_params(),
            self.critic.num_params(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Index range of the critic parameters in the flat vector.
    pub fn critic_range(&self) -> std::ops::Range<usize> {
        let n = self.num_params();
        n - self.critic.num_params()..n
    }

    /// Named tensors in flat order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        for (name, d) in [("encoder0", &self.encoder0), ("encoder1", &self.encoder1)] {
            specs.push((format!("{name}.weight"), vec![d.out_dim(), d.in_dim()]));
            specs.push((format!("{name}.bias"), vec![d.out_dim()]));
        }
        let (h, i) = (self.lstm.hidden_dim(), self.lstm.input_dim());
        specs.push(("lstm.weight".into(), vec![4 * h, i + h]));
        specs.push(("lstm.bias".into(), vec![4 * h]));
        specs.push(("actor.weight".into(), vec![NUM_ACTIONS, h]));
        specs.push(("actor.bias".into(), vec![NUM_ACTIONS]));
        specs.extend(self.critic.param_blocks().into_iter().map(|(n, s)| (n.to_string(), s)));
        specs
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.encoder0.params());
        out.extend_from_slice(self.encoder1.params());
        out.extend_from_slice(self.lstm.params());
        out.extend_from_slice(self.actor.params());
        self.critic.params_into(&mut out);
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(NavqError::Input(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let [a, b, c, d, _] = self.block_sizes();
        let (pa, rest) = p.split_at(a);
        let (pb, rest) = rest.split_at(b);
        let (pc, rest) = rest.split_at(c);
        let (pd, pe) = rest.split_at(d);
        self.encoder0.params_mut().copy_from_slice(pa);
        self.encoder1.params_mut().copy_from_slice(pb);
        self.lstm.params_mut().copy_from_slice(pc);
        self.actor.params_mut().copy_from_slice(pd);
        self.critic.set_params(pe);
        Ok(())
    }

    pub fn initial_state(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.hidden_dim()], vec![0.0; self.hidden_dim()])
    }

    /// Encoder, LSTM and actor logits for one observation.
    pub fn forward_policy(&self, features: &[f64], extras: &[f64; LSTM_EXTRAS], h_prev: &[f64], c_prev: &[f64]) -> Result<StepForward> {
        let enc0 = tanh_vec(&self.encoder0.forward(features)?);
        let enc1 = tanh_vec(&self.encoder1.forward_unchecked(&enc0));
        let mut input = enc1.clone();
        input.extend_from_slice(extras);
        let (h, c, lstm_cache) = self.lstm.step_cached(&input, h_prev, c_prev)?;
        let logits = self.actor.forward_unchecked(&h);
        Ok(StepForward { features: features.to_vec(), extras: *extras, enc0, enc1, lstm_cache, h, c, logits })
    }

    /// Backpropagates one step. `dlogits` and `dh_extra` (from the critic and
    /// from the next step) enter at the LSTM output; returns `(dh_prev, dc_prev)`.
    fn backward_policy(&self, f: &StepForward, dlogits: &[f64], dh_extra: &[f64], dc: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let [a, b, c, d, _] = self.block_sizes();
        let (g0, rest) = grad.split_at_mut(a);
        let (g1, rest) = rest.split_at_mut(b);
        let (gl, rest) = rest.split_at_mut(c);
        let (ga, _) = rest.split_at_mut(d);
        let mut dh = self.actor.backward(&f.h, dlogits, ga);
        for (x, y) in dh.iter_mut().zip(dh_extra) {
            *x += y;
        }
        let (dx, dh_prev, dc_prev) = self.lstm.backward_step(&f.lstm_cache, &dh, dc, gl);
        let de1 = tanh_backward(&f.enc1, &dx[..f.enc1.len()]);
        let de0 = tanh_backward(&f.enc0, &self.encoder1.backward(&f.enc0, &de1, g1));
        self.encoder0.backward(&f.features, &de0, g0);
        (dh_prev, dc_prev)
    }
}

/// Previous reward, car velocity (world frame) and previous speed action,
/// scaled to O(1).
pub fn lstm_extras(state: &WorldState) -> [f64; LSTM_EXTRAS] {
    let v = state.car.velocity();
    let vref = 50.0 * KMH;
    [
        (state.prev_reward / 100.0).clamp(-3.0, 3.0),
        v[0] / vref,
        v[1] / vref,
        state.prev_action.map(|a| a.acc.sign()).unwrap_or(0.0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub index: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub probs: Vec<f64>,
}

/// Samples from `softmax(logits)` or, when `greedy`, takes the argmax (first
/// maximal index on ties).
pub fn select_action<R: Rng + ?Sized>(logits: &[f64], greedy: bool, rng: &mut R) -> ActionChoice {
    let (probs, entropy) = softmax_entropy(logits);
    let index = if greedy {
        let mut best = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = i;
            }
        }
        best
    } else {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    ActionChoice { index, log_prob: crate::nn::log_softmax_at(logits, index), entropy, probs }
}

/// `G_t = r_t + γ G_{t+1}` seeded with `bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

// ---------------------------------------------------------------------------
// episodes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub observation: Observation,
    pub action: SpeedAction,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
    pub reward: RewardBreakdown,
    /// LSTM output the actor and critic saw.
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scene_index: usize,
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    /// Critic value of the final state when the episode timed out, else 0.
    pub bootstrap: f64,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total).sum()
    }

    pub fn mean_entropy(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.entropy).sum::<f64>() / self.steps.len() as f64
    }

    /// Rewards multiplied by `scale`.
    pub fn rewards(&self, scale: f64) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward.total * scale).collect()
    }
}

/// `(J_V, J_π)` with `J_V = mean (G − V)²` and
/// `J_π = mean [A log π(a)] + β · mean entropy-term`, `A = G − V` held fixed.
pub fn losses(trace: &EpisodeTrace, returns: &[f64], entropy_beta: f64, sign: EntropySign) -> Result<(f64, f64)> {
    if returns.len() != trace.steps.len() {
        return Err(NavqError::Usage(format!("{} returns for {} steps", returns.len(), trace.steps.len())));
    }
    if returns.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = returns.len() as f64;
    let mut jv = 0.0;
    let mut jpi = 0.0;
    for (s, g) in trace.steps.iter().zip(returns) {
        let adv = g - s.value;
        jv += adv * adv;
        let h = match sign {
            EntropySign::Bonus => s.entropy,
            EntropySign::Literal => -s.entropy,
        };
        jpi += adv * s.log_prob + entropy_beta * h;
    }
    Ok((jv / n, jpi / n))
}

/// Episode plus the activations needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: EpisodeTrace,
    forwards: Vec<StepForward>,
    critic_caches: Vec<CriticCache>,
    probs: Vec<Vec<f64>>,
}

/// Streams used while rolling out.
pub struct RolloutRngs<'a> {
    pub policy: &'a mut StreamRng,
    pub noise: &'a mut StreamRng,
}

/// Runs one episode from `state`. With `greedy` the argmax action is taken;
/// `mode = None` skips critic gradients.
pub fn rollout(
    model: &ActorCritic,
    mut state: WorldState,
    mut obs: Observation,
    scene_index: usize,
    greedy: bool,
    mode: Option<GradientMode>,
    rngs: RolloutRngs<'_>,
) -> Result<Rollout> {
    let (mut h, mut c) = model.initial_state();
    let mut out = Rollout {
        trace: EpisodeTrace { scene_index, steps: Vec::new(), outcome: Outcome::Timeout, bootstrap: 0.0 },
        forwards: Vec::new(),
        critic_caches: Vec::new(),
        probs: Vec::new(),
    };
    loop {
        let f = model.forward_policy(&obs.features(), &lstm_extras(&state), &h, &c)?;
        let choice = select_action(&f.logits, greedy, rngs.policy);
        let (value, cache) = match mode {
            Some(m) => model.critic.forward(&f.h, m, rngs.noise)?,
            None => (model.critic.value(&f.h, rngs.noise)?, CriticCache::None),
        };
        let acc = SpeedAction::from_index(choice.index).expect("3 actions");
        let (next_obs, reward, done, _) = state.step_speed(acc)?;
        out.trace.steps.push(TraceStep {
            observation: obs,
            action: acc,
            log_prob: choice.log_prob,
            entropy: choice.entropy,
            value,
            reward,
            hidden: f.h.clone(),
        });
        h = f.h.clone();
        c = f.c.clone();
        out.forwards.push(f);
        out.critic_caches.push(cache);
        out.probs.push(choice.probs);
        obs = next_obs;
        if done {
            break;
        }
    }
    out.trace.outcome = state.outcome.unwrap_or(Outcome::Timeout);
    if out.trace.outcome == Outcome::Timeout {
        let f = model.forward_policy(&obs.features(), &lstm_extras(&state), &h, &c)?;
        out.trace.bootstrap = model.critic.value(&f.h, rngs.noise)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradient {
    /// ∂(J_V − J_π)/∂params in flat order.
    pub grad: Vec<f64>,
    pub value_loss: f64,
    pub policy_objective: f64,
    pub returns: Vec<f64>,
}

/// Backpropagation through time of `J_V − J_π` for one rollout.
pub fn episode_gradient(model: &ActorCritic, rollout: &Rollout, cfg: &AgentConfig) -> Result<EpisodeGradient> {
    let trace = &rollout.trace;
    let returns = discounted_returns(&trace.rewards(cfg.reward_scale), cfg.gamma, trace.bootstrap);
    let (jv, jpi) = losses(trace, &returns, cfg.entropy_beta, cfg.entropy_sign)?;
    let n = trace.steps.len() as f64;
    let hd = model.hidden_dim();
    let mut grad = vec![0.0; model.num_params()];
    let crit = model.critic_range();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let beta_sign = match cfg.entropy_sign {
        EntropySign::Bonus => 1.0,
        EntropySign::Literal => -1.0,
    };
    for t in (0..trace.steps.len()).rev() {
        let step = &trace.steps[t];
        let f = &rollout.forwards[t];
        let probs = &rollout.probs[t];
        let adv = returns[t] - step.value;
        let a = step.action.index();
        // policy term: −(A/n)(onehot − π); entropy: ±(β/n) π_j (log π_j + H)
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let ent = if *p > 0.0 { p * (p.ln() + step.entropy) } else { 0.0 };
                -adv / n * (onehot - p) + beta_sign * cfg.entropy_beta / n * ent
            })
            .collect();
        let dv = -2.0 * adv / n;
        let dh_critic = model.critic.backward(&f.h, &rollout.critic_caches[t], dv, &mut grad[crit.clone()])?;
        let dh_extra: Vec<f64> = dh_next.iter().zip(&dh_critic).map(|(a, b)| a + b).collect();
        let (dh_prev, dc_prev) = model.backward_policy(f, &dlogits, &dh_extra, &dc_next, &mut grad);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    if let Some(max) = cfg.max_grad_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    Ok(EpisodeGradient { grad, value_loss: jv, policy_objective: jpi, returns })
}

/// `J_V − J_π` re-evaluated with `model` along the recorded trajectory, with
/// the advantages of the recorded values held fixed. Its gradient is what
/// [`episode_gradient`] computes; quantum noise is not re-sampled, so use a
/// noiseless critic when comparing.
pub fn surrogate_loss(model: &ActorCritic, rollout: &Rollout, cfg: &AgentConfig) -> Result<f64> {
    let trace = &rollout.trace;
    let returns = discounted_returns(&trace.rewards(cfg.reward_scale), cfg.gamma, trace.bootstrap);
    let n = trace.steps.len() as f64;
    let (mut h, mut c) = model.initial_state();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut total = 0.0;
    for (t, step) in trace.steps.iter().enumerate() {
        let rec = &rollout.forwards[t];
        let f = model.forward_policy(&rec.features, &rec.extras, &h, &c)?;
        let v = model.critic.value(&f.h, &mut rng)?;
        let adv = returns[t] - step.value;
        let (_, ent) = softmax_entropy(&f.logits);
        let ent = match cfg.entropy_sign {
            EntropySign::Bonus => ent,
            EntropySign::Literal => -ent,
        };
        let logp = crate::nn::log_softmax_at(&f.logits, step.action.index());
        total += (returns[t] - v).powi(2) - adv * logp - cfg.entropy_beta * ent;
        h = f.h;
        c = f.c;
    }
    Ok(total / n)
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub smoothed_return: f64,
    pub entropy: f64,
    pub steps: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub window: usize,
    pub episodes: Vec<EpisodeRecord>,
}

pub const RUN_CSV_HEADER: [&str; 6] = ["episode", "return", "smoothed_return", "entropy", "steps", "outcome"];

impl RunRecord {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ret).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.entropy).collect()
    }

    fn resmooth(&mut self) -> Result<()> {
        let s = smooth_curve(&self.returns(), self.window)?;
        for (e, v) in self.episodes.iter_mut().zip(s) {
            e.smoothed_return = v;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RUN_CSV_HEADER)?;
        for e in &self.episodes {
            out.write_record([
                e.episode.to_string(),
                e.ret.to_string(),
                e.smoothed_return.to_string(),
                e.entropy.to_string(),
                e.steps.to_string(),
                e.outcome.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| NavqError::Io(e.to_string()))
    }

    /// Reads a CSV written by [`RunRecord::write_csv`].
    pub fn read_csv(path: &FsPath, window: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != RUN_CSV_HEADER {
            return Err(NavqError::Input(format!("{}: unexpected header {header:?}", path.display())));
        }
        let mut episodes = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i].parse::<f64>().map_err(|_| NavqError::Input(format!("{}: bad number {:?}", path.display(), &row[i])))
            };
            let outcome = match &row[5] {
                "goal" => Outcome::Goal,
                "collision" => Outcome::Collision,
                "timeout" => Outcome::Timeout,
                other => return Err(NavqError::Input(format!("unknown outcome {other:?}"))),
            };
            episodes.push(EpisodeRecord {
                episode: num(0)? as usize,
                ret: num(1)?,
                smoothed_return: num(2)?,
                entropy: num(3)?,
                steps: num(4)? as usize,
                outcome,
            });
        }
        Ok(RunRecord { seed: 0, window, episodes })
    }
}

/// Plans every scene lazily and keeps the result.
#[derive(Debug, Clone)]
pub struct SceneBank {
    pub env: Arc<EnvConfig>,
    pub scenes: Vec<Scene>,
    plans: Vec<Option<(Arc<CostMap>, Arc<Path>)>>,
}

impl SceneBank {
    pub fn new(env: EnvConfig, scenes: Vec<Scene>) -> Result<Self> {
        env.validate()?;
        if scenes.is_empty() {
            return Err(NavqError::Config("scene list is empty".into()));
        }
        let n = scenes.len();
        Ok(SceneBank { env: Arc::new(env), scenes, plans: vec![None; n] })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn reset(&mut self, index: usize) -> Result<(WorldState, Observation)> {
        let scene = &self.scenes[index];
        if self.plans[index].is_none() {
            let map = scene_cost_map(scene, self.env.map_resolution)?;
            let path = plan_path(&map, self.env.vehicle(), scene.car_start, scene.car_goal, &self.env.planner)
                .map_err(|e| NavqError::Scene(format!("scene {index} (scenario {}): {e}", scene.scenario_id)))?;
            self.plans[index] = Some((Arc::new(map), Arc::new(path)));
        }
        let (map, path) = self.plans[index].clone().expect("planned");
        reset_with(scene, &self.env, map, path)
    }
}

pub struct Trainer {
    pub config: AgentConfig,
    pub model: ActorCritic,
    pub bank: SceneBank,
    adam: AdamState,
    env_rng: StreamRng,
    policy_rng: StreamRng,
    noise_rng: StreamRng,
    records: Vec<EpisodeRecord>,
}

impl Trainer {
    /// The agent's `max_steps` overrides the environment's.
    pub fn new(config: AgentConfig, mut env: EnvConfig, scenes: Vec<Scene>) -> Result<Self> {
        config.validate()?;
        env.max_steps = config.max_steps;
        let bank = SceneBank::new(env, scenes)?;
        let mut init = substream(config.seed, Stream::Init);
        let model = ActorCritic::new(&config, bank.env.observation_dim(), &mut init)?;
        let adam = AdamState::new(model.num_params(), config.adam());
        Ok(Trainer {
            env_rng: substream(config.seed, Stream::Env),
            policy_rng: substream(config.seed, Stream::Policy),
            noise_rng: substream(config.seed, Stream::Noise),
            config,
            model,
            bank,
            adam,
            records: Vec::new(),
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.records.len()
    }

    /// Samples a scene uniformly and rolls out the current (stochastic) policy.
    pub fn collect(&mut self) -> Result<Rollout> {
        let idx = self.env_rng.gen_range(0..self.bank.len());
        let (state, obs) = self.bank.reset(idx)?;
        rollout(
            &self.model,
            state,
            obs,
            idx,
            false,
            Some(self.config.gradient_mode),
            RolloutRngs { policy: &mut self.policy_rng, noise: &mut self.noise_rng },
        )
    }

    pub fn gradient(&self, r: &Rollout) -> Result<EpisodeGradient> {
        episode_gradient(&self.model, r, &self.config)
    }

    pub fn apply(&mut self, grad: &[f64]) -> Result<()> {
        let mut p = self.model.flat_params();
        self.adam.update(&mut p, grad)?;
        self.model.set_flat_params(&p)
    }

    pub fn train_episode(&mut self) -> Result<EpisodeRecord> {
        let r = self.collect()?;
        let g = self.gradient(&r)?;
        self.apply(&g.grad)?;
        let rec = EpisodeRecord {
            episode: self.records.len(),
            ret: r.trace.total_reward(),
            smoothed_return: 0.0,
            entropy: r.trace.mean_entropy(),
            steps: r.trace.steps.len(),
            outcome: r.trace.outcome,
        };
        self.records.push(rec.clone());
        Ok(rec)
    }

    pub fn record(&self) -> Result<RunRecord> {
        let mut r = RunRecord { seed: self.config.seed, window: self.config.smoothing_window, episodes: self.records.clone() };
        r.resmooth()?;
        Ok(r)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.config, &self.bank.env, self.records.len())
    }
}

pub struct TrainOutput {
    pub record: RunRecord,
    pub model: ActorCritic,
    pub checkpoint: Checkpoint,
}

/// Trains for `config.episodes` episodes over `scenes`.
pub fn train_run(config: &AgentConfig, env: &EnvConfig, scenes: &[Scene]) -> Result<TrainOutput> {
    let mut t = Trainer::new(config.clone(), env.clone(), scenes.to_vec())?;
    for _ in 0..config.episodes {
        t.train_episode()?;
    }
    Ok(TrainOutput { record: t.record()?, checkpoint: t.checkpoint(), model: t.model })
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub obs_dim: usize,
    pub episodes_trained: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &ActorCritic, agent: &AgentConfig, env: &EnvConfig, episodes_trained: usize) -> Self {
        let flat = model.flat_params();
        let mut off = 0;
        let tensors = model
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let t = NamedTensor { name, shape, values: flat[off..off + n].to_vec() };
                off += n;
                t
            })
            .collect();
        Checkpoint { agent: agent.clone(), env: env.clone(), obs_dim: model.obs_dim(), episodes_trained, tensors }
    }

    pub fn to_model(&self) -> Result<ActorCritic> {
        // build a skeleton with the right shapes, then overwrite every tensor
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = ActorCritic::new(&self.agent, self.obs_dim, &mut rng)?;
        let specs = model.param_specs();
        if specs.len() != self.tensors.len() {
            return Err(NavqError::Input(format!("checkpoint has {} tensors, model expects {}", self.tensors.len(), specs.len())));
        }
        let mut flat = Vec::with_capacity(model.num_params());
        for ((name, shape), t) in specs.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.values.len() != shape.iter().product::<usize>() {
                return Err(NavqError::Input(format!("checkpoint tensor {} does not match expected {name} {shape:?}", t.name)));
            }
            flat.extend_from_slice(&t.values);
        }
        model.set_flat_params(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| NavqError::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Anything that chooses a speed action each step.
pub trait DrivingPolicy {
    fn reset(&mut self);
    fn act(&mut self, state: &WorldState, obs: &Observation) -> Result<SpeedAction>;
}

/// Argmax policy of a trained network.
pub struct GreedyPolicy<'a> {
    model: &'a ActorCritic,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(model: &'a ActorCritic) -> Self {
        let (h, c) = model.initial_state();
        GreedyPolicy { model, h, c }
    }
}

impl DrivingPolicy for GreedyPolicy<'_> {
    fn reset(&mut self) {
        (self.h, self.c) = self.model.initial_state();
    }

    fn act(&mut self, state: &WorldState, obs: &Observation) -> Result<SpeedAction> {
        let f = self.model.forward_policy(&obs.features(), &lstm_extras(state), &self.h, &self.c)?;
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        let a = select_action(&f.logits, true, &mut unused).index;
        self.h = f.h;
        self.c = f.c;
        Ok(SpeedAction::from_index(a).expect("3 actions"))
    }
}

/// Uniformly random speed actions.
pub struct RandomPolicy {
    pub rng: StreamRng,
}

impl DrivingPolicy for RandomPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _: &WorldState, _: &Observation) -> Result<SpeedAction> {
        Ok(SpeedAction::ALL[self.rng.gen_range(0..NUM_ACTIONS)])
    }
}

/// Always the same speed action.
pub struct FixedPolicy(pub SpeedAction);

impl DrivingPolicy for FixedPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _: &WorldState, _: &Observation) -> Result<SpeedAction> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene_index: usize,
    pub scenario_id: u8,
    pub pedestrian_speed: f64,
    pub spawn_distance: f64,
    pub outcome: Outcome,
    pub steps: usize,
    pub time_to_goal: Option<f64>,
    pub near_miss: bool,
    #[serde(rename = "return")]
    pub ret: f64,
}

pub const OUTCOME_CSV_HEADER: [&str; 9] =
    ["scene", "scenario", "pedestrian_speed", "spawn_distance", "outcome", "steps", "time_to_goal", "near_miss", "return"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario_id: u8,
    pub episodes: usize,
    pub crash_rate: f64,
    pub near_miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub episodes: usize,
    /// Mean time-to-goal (s) over goal-reaching episodes; absent if none.
    pub mean_time_to_goal: Option<f64>,
    /// Percent of episodes ending in a collision.
    pub crash_rate: f64,
    /// Percent of episodes with at least one near miss.
    pub near_miss_rate: f64,
    pub goal_rate: f64,
    /// Scenarios with crash and near-miss rates both below the threshold.
    pub safety_index: usize,
    pub safety_threshold: f64,
    pub mean_return: f64,
    pub per_scenario: Vec<ScenarioMetrics>,
}

pub const SAFETY_THRESHOLD: f64 = 20.0;

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Rolls `policy` out once on every scene of the bank.
pub fn evaluate_policy(policy: &mut dyn DrivingPolicy, bank: &mut SceneBank) -> Result<(PolicyMetrics, Vec<SceneOutcome>)> {
    let mut outcomes = Vec::with_capacity(bank.len());
    for idx in 0..bank.len() {
        let (mut state, mut obs) = bank.reset(idx)?;
        policy.reset();
        let mut ret = 0.0;
        let mut near_miss = false;
        loop {
            let a = policy.act(&state, &obs)?;
            let (o, r, done, info) = state.step_speed(a)?;
            ret += r.total;
            near_miss |= info.near_miss;
            obs = o;
            if done {
                break;
            }
        }
        let outcome = state.outcome.unwrap_or(Outcome::Timeout);
        let scene = &bank.scenes[idx];
        outcomes.push(SceneOutcome {
            scene_index: idx,
            scenario_id: scene.scenario_id,
            pedestrian_speed: scene.pedestrian_speed,
            spawn_distance: scene.spawn_distance,
            outcome,
            steps: state.step,
            time_to_goal: (outcome == Outcome::Goal).then(|| state.step as f64 * bank.env.dt),
            near_miss,
            ret,
        });
    }
    Ok((summarize(&outcomes), outcomes))
}

pub fn summarize(outcomes: &[SceneOutcome]) -> PolicyMetrics {
    let n = outcomes.len();
    let ttg: Vec<f64> = outcomes.iter().filter_map(|o| o.time_to_goal).collect();
    let mut by_id: BTreeMap<u8, (usize, usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = by_id.entry(o.scenario_id).or_default();
        e.0 += 1;
        e.1 += (o.outcome == Outcome::Collision) as usize;
        e.2 += o.near_miss as usize;
    }
    let per_scenario: Vec<ScenarioMetrics> = by_id
        .into_iter()
        .map(|(id, (k, c, m))| ScenarioMetrics { scenario_id: id, episodes: k, crash_rate: pct(c, k), near_miss_rate: pct(m, k) })
        .collect();
    PolicyMetrics {
        episodes: n,
        mean_time_to_goal: (!ttg.is_empty()).then(|| ttg.iter().sum::<f64>() / ttg.len() as f64),
        crash_rate: pct(outcomes.iter().filter(|o| o.outcome == Outcome::Collision).count(), n),
        near_miss_rate: pct(outcomes.iter().filter(|o| o.near_miss).count(), n),
        goal_rate: pct(ttg.len(), n),
        safety_index: per_scenario
            .iter()
            .filter(|s| s.crash_rate < SAFETY_THRESHOLD && s.near_miss_rate < SAFETY_THRESHOLD)
            .count(),
        safety_threshold: SAFETY_THRESHOLD,
        mean_return: if n == 0 { 0.0 } else { outcomes.iter().map(|o| o.ret).sum::<f64>() / n as f64 },
        per_scenario,
    }
}

pub fn write_outcomes_csv<W: Write>(outcomes: &[SceneOutcome], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(OUTCOME_CSV_HEADER)?;
    for o in outcomes {
        out.write_record([
            o.scene_index.to_string(),
            o.scenario_id.to_string(),
            o.pedestrian_speed.to_string(),
            o.spawn_distance.to_string(),
            o.outcome.as_str().to_string(),
            o.steps.to_string(),
            o.time_to_goal.map(|t| t.to_string()).unwrap_or_default(),
            o.near_miss.to_string(),
            o.ret.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Hidden states visited by the greedy policy, for Fisher-information inputs.
/// Scenes are visited in order until `count` states are gathered; states
/// are then subsampled evenly.
pub fn collect_hidden_states(model: &ActorCritic, bank: &mut SceneBank, count: usize) -> Result<Vec<Vec<f64>>> {
    let mut pool = Vec::new();
    for idx in 0..bank.len() {
        let (mut state, mut obs) = bank.reset(idx)?;
        let mut policy = GreedyPolicy::new(model);
        loop {
            let f = model.forward_policy(&obs.features(), &lstm_extras(&state), &policy.h, &policy.c)?;
            pool.push(f.h.clone());
            let a = policy.act(&state, &obs)?;
            let (o, _, done, _) = state.step_speed(a)?;
            obs = o;
            if done {
                break;
            }
        }
        if pool.len() >= 4 * count {
            break;
        }
    }
    if pool.len() <= count {
        return Ok(pool);
    }
    let stride = pool.len() as f64 / count as f64;
    Ok((0..count).map(|i| pool[(i as f64 * stride) as usize].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[3.0], 0.9, 0.0), vec![3.0]);
        assert_eq!(discounted_returns(&[1.0, 1.0], 0.5, 0.0), vec![1.5, 1.0]);
        assert_eq!(discounted_returns(&[1.0, -2.0, 4.0], 0.0, 7.0), vec![1.0, -2.0, 4.0]);
        assert_eq!(discounted_returns(&[1.0], 0.5, 2.0), vec![2.0]);
    }

    #[test]
    fn greedy_selection() {
        let mut rng = substream(0, Stream::Policy);
        let c = select_action(&[5.0, 0.0, 0.0], true, &mut rng);
        assert_eq!(c.index, 0);
        let s = select_action(&[0.3, -1.0, 2.0], false, &mut rng);
        assert!((s.log_prob - s.probs[s.index].ln()).abs() < 1e-12);
    }

    #[test]
    fn classical_critic_has_2305_params() {
        let cfg = AgentConfig { critic: CriticConfig::Classical { hidden: 64 }, ..AgentConfig::default() };
        let mut rng = substream(1, Stream::Init);
        assert_eq!(Critic::new(&cfg, &mut rng).unwrap().num_params(), 2305);
    }

    #[test]
    fn hybrid_critic_examples() {
        let layout = plan_layout(32, 4, 2).unwrap();
        let mut rng = substream(1, Stream::Init);
        let mut q = HybridCritic::new(layout, NoiseSpec::none(), false, &mut rng).unwrap();
        assert_eq!(q.num_params(), 53);
        let n = q.num_params();
        let pqc = layout.pqc_param_count;
        let p = q.params_mut();
        p[pqc..n - 1].iter_mut().for_each(|w| *w = 0.0);
        p[n - 1] = 0.7;
        assert_eq!(q.value(&vec![0.3; 32], &mut rng).unwrap(), 0.7);
        let p = q.params_mut();
        p[..pqc].iter_mut().for_each(|t| *t = 0.0);
        p[pqc..n - 1].iter_mut().for_each(|w| *w = 1.0);
        p[n - 1] = 0.0;
        assert!((q.value(&[0.0; 32], &mut rng).unwrap() - 4.0).abs() < 1e-12);
        assert!(q.value(&[0.0; 31], &mut rng).is_err());
    }

    #[test]
    fn loss_examples() {
        let step = |value: f64, log_prob: f64, entropy: f64| TraceStep {
            observation: Observation {
                goal_rel: [0.0; 2],
                cross_track: 0.0,
                speed: 0.0,
                prev_speed_action: [0.0; 3],
                prev_reward: 0.0,
                pedestrians: vec![],
            },
            action: SpeedAction::Maintain,
            log_prob,
            entropy,
            value,
            reward: RewardBreakdown::default(),
            hidden: vec![],
        };
        let trace = EpisodeTrace { scene_index: 0, steps: vec![step(0.5, 0.5f64.ln(), 1.0)], outcome: Outcome::Goal, bootstrap: 0.0 };
        let (jv, jpi) = losses(&trace, &[1.0], 0.0, EntropySign::Bonus).unwrap();
        assert!((jv - 0.25).abs() < 1e-15);
        assert!((jpi - 0.5f64.ln() * 0.5).abs() < 1e-15);
        assert!((jpi + 0.34657359).abs() < 1e-8);
        let (jv0, jpi0) = losses(&trace, &[0.5], 0.3, EntropySign::Bonus).unwrap();
        assert_eq!(jv0, 0.0);
        assert!((jpi0 - 0.3).abs() < 1e-15);
        assert!(losses(&trace, &[1.0, 2.0], 0.0, EntropySign::Bonus).is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(AgentConfig { gamma: 1.5, ..AgentConfig::default() }.validate().is_err());
        assert!(AgentConfig { entropy_beta: -0.1, ..AgentConfig::default() }.validate().is_err());
        assert!(AgentConfig::default().validate().is_ok());
    }
}
