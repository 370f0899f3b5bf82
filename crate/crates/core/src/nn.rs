//! Small classical network stack with hand-written backward passes.
//!
//! Every layer keeps its parameters in one flat `Vec<f64>` so the optimizer
//! and checkpoint code can treat them uniformly. Backward functions
//! accumulate into a caller-provided gradient buffer of the same length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn xavier<R: Rng + ?Sized>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return config_err(format!("{what}: expected length {want}, got {got}"));
    }
    Ok(())
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// dL/dx for y = tanh(x), given y and dL/dy.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = W x + b`, W stored row-major (out × in) followed by b.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    params: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut params = xavier(in_dim * out_dim, in_dim, out_dim, rng);
        params.resize(in_dim * out_dim + out_dim, 0.0);
        Dense { in_dim, out_dim, params }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: &[f64], bias: &[f64]) -> Result<Self> {
        check_len("dense weights", weights.len(), in_dim * out_dim)?;
        check_len("dense bias", bias.len(), out_dim)?;
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        Ok(Dense { in_dim, out_dim, params })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
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

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("dense input", x.len(), self.in_dim)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.in_dim * self.out_dim);
        w.chunks_exact(self.in_dim)
            .zip(b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Accumulates dW, db into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let nw = self.in_dim * self.out_dim;
        let (gw, gb) = grad.split_at_mut(nw);
        let w = &self.params[..nw];
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let d = dy[o];
            gb[o] += d;
            if d == 0.0 {
                continue;
            }
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                gw[row + i] += d * x[i];
                dx[i] += d * w[row + i];
            }
        }
        dx
    }
}

pub fn dense_forward(layer: &Dense, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

/// Layer normalization with trainable gain and bias (stored gain then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    dim: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        let mut params = vec![1.0; dim];
        params.resize(2 * dim, 0.0);
        LayerNorm { dim, params }
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

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LayerNormCache)> {
        check_len("layer norm input", x.len(), self.dim)?;
        let (gain, bias) = self.params.split_at(self.dim);
        let (y, cache) = normalize(x, gain, bias);
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n = self.dim as f64;
        let gain = &self.params[..self.dim];
        let (gg, gb) = grad.split_at_mut(self.dim);
        let mut dxhat = vec![0.0; self.dim];
        for i in 0..self.dim {
            gg[i] += dy[i] * cache.xhat[i];
            gb[i] += dy[i];
            dxhat[i] = dy[i] * gain[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(&cache.xhat).map(|(d, x)| d * x).sum::<f64>() / n;
        dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(d, xh)| cache.inv_std * (d - mean_d - xh * mean_dx))
            .collect()
    }
}

fn normalize(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = xhat.iter().zip(gain).zip(bias).map(|((x, g), b)| x * g + b).collect();
    (y, LayerNormCache { xhat, inv_std })
}

/// Stateless layer normalization: `(x − mean)/sqrt(var + ε)·gain + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return config_err("layer norm needs at least two entries");
    }
    check_len("layer norm gain", gain.len(), x.len())?;
    check_len("layer norm bias", bias.len(), x.len())?;
    Ok(normalize(x, gain, bias).0)
}

/// LSTM cell. Gate rows are ordered input, forget, candidate, output; the
/// weight matrix (4h × (in + h)) acts on `[x; h_prev]` and is followed by
/// the 4h biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Activations saved by a forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let cols = input_dim + hidden_dim;
        let mut params = xavier(4 * hidden_dim * cols, cols, hidden_dim, rng);
        params.resize(4 * hidden_dim * cols + 4 * hidden_dim, 0.0);
        LstmCell { input_dim, hidden_dim, params }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let n = 4 * hidden_dim * (input_dim + hidden_dim) + 4 * hidden_dim;
        LstmCell { input_dim, hidden_dim, params: vec![0.0; n] }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
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

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (h, c, _) = self.step_cached(x, h_prev, c_prev)?;
        Ok((h, c))
    }

    pub fn step_cached(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
        check_len("lstm input", x.len(), self.input_dim)?;
        check_len("lstm hidden state", h_prev.len(), self.hidden_dim)?;
        check_len("lstm cell state", c_prev.len(), self.hidden_dim)?;
        let hd = self.hidden_dim;
        let cols = self.input_dim + hd;
        let mut z = Vec::with_capacity(cols);
        z.extend_from_slice(x);
        z.extend_from_slice(h_prev);
        let (w, b) = self.params.split_at(4 * hd * cols);
        let pre: Vec<f64> = w
            .chunks_exact(cols)
            .zip(b)
            .map(|(row, b)| b + row.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>())
            .collect();
        let i: Vec<f64> = pre[..hd].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..].iter().map(|v| sigmoid(*v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache { z, i, f, g, o, c_prev: c_prev.to_vec(), tanh_c };
        Ok((h, c, cache))
    }

    /// Backward through one step. `dh`, `dc` are the gradients flowing into
    /// this step's outputs. Returns (dx, dh_prev, dc_prev).
    pub fn backward_step(&self, cache: &LstmCache, dh: &[f64], dc: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let cols = self.input_dim + hd;
        let mut dpre = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let do_ = dh[k] * cache.tanh_c[k];
            let dct = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            let di = dct * cache.g[k];
            let df = dct * cache.c_prev[k];
            let dg = dct * cache.i[k];
            dc_prev[k] = dct * cache.f[k];
            dpre[k] = di * cache.i[k] * (1.0 - cache.i[k]);
            dpre[hd + k] = df * cache.f[k] * (1.0 - cache.f[k]);
            dpre[2 * hd + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
            dpre[3 * hd + k] = do_ * cache.o[k] * (1.0 - cache.o[k]);
        }
        let nw = 4 * hd * cols;
        let w = &self.params[..nw];
        let (gw, gb) = grad.split_at_mut(nw);
        let mut dz = vec![0.0; cols];
        for (r, d) in dpre.iter().enumerate() {
            gb[r] += d;
            if *d == 0.0 {
                continue;
            }
            let row = r * cols;
            for j in 0..cols {
                gw[row + j] += d * cache.z[j];
                dz[j] += d * w[row + j];
            }
        }
        let dh_prev = dz.split_off(self.input_dim);
        (dz, dh_prev, dc_prev)
    }
}

pub fn lstm_step(cell: &LstmCell, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    cell.step(x, h_prev, c_prev)
}

/// Softmax probabilities and natural-log entropy `−Σ p ln p`.
pub fn softmax_entropy(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let log_sum = sum.ln();
    let entropy = -logits
        .iter()
        .zip(&probs)
        .map(|(l, p)| p * (l - max - log_sum))
        .sum::<f64>();
    (probs, entropy.max(0.0))
}

/// ln softmax(logits)[k], computed stably.
pub fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    0.0005
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: default_lr(), beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam step, in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam params", params.len(), self.m.len())?;
        check_len("adam grads", grads.len(), self.m.len())?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_update(state: &mut AdamState, params: &[f64], grads: &[f64]) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.update(&mut out, grads)?;
    Ok(out)
}

/// Relative error used by gradient checks: `|a − n| / max(|a|, |n|, 1e-3)`.
/// Below the 1e-3 floor the measure is absolute.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares an analytic gradient against central differences of `loss`
/// around `params` and returns the largest relative error.
pub fn finite_diff_check<F>(loss: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&h) {
        return config_err(format!("finite-difference step {h} outside [1e-7, 1e-3]"));
    }
    check_len("analytic gradient", analytic.len(), params.len())?;
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = loss(&p);
        p[k] = orig - h;
        let down = loss(&p);
        p[k] = orig;
        worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
