//! Capacity and trainability analysis.
//!
//! The Fisher information of a scalar critic is taken under a unit-variance
//! Gaussian output model, for which the expected score outer product is
//! `∇V ∇Vᵀ`. Effective dimension follows the Monte-Carlo form
//!
//! ```text
//! κ = γ n / (2π ln n)
//! ED = 2 ln( mean_θ sqrt(det(I + κ F̄(θ))) ) / ln κ
//! ```
//!
//! with `F̄ = d F̂ / mean_θ tr F̂`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NavqError, Result};

/// Scalar model whose parameter gradient defines the Fisher information.
pub trait ValueModel {
    fn num_params(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Draws a parameter point from the analysis cube.
    fn sample_params(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// ∂V(x; params)/∂params.
    fn value_gradient(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>>;
}

/// `(1/k) Σ_j g_j g_jᵀ`.
pub fn empirical_fim(gradients: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let g = gradient_matrix(gradients)?;
    let k = g.nrows() as f64;
    let mut f = g.transpose() * &g / k;
    f.fill_upper_triangle_with_lower_triangle();
    Ok(f)
}

fn gradient_matrix(gradients: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = gradients.first().ok_or_else(|| NavqError::Usage("Fisher information needs at least one sample".into()))?;
    let d = first.len();
    if gradients.iter().any(|g| g.len() != d) {
        return Err(NavqError::Input("gradient samples differ in length".into()));
    }
    Ok(DMatrix::from_fn(gradients.len(), d, |r, c| gradients[r][c]))
}

/// Eigenvalues of `GᵀG/k` without forming the d×d matrix when k < d: the
/// nonzero spectrum equals that of `GGᵀ/k`. Returns all d values, descending.
pub fn fim_spectrum(gradients: &[Vec<f64>]) -> Result<Vec<f64>> {
    let g = gradient_matrix(gradients)?;
    let (k, d) = g.shape();
    let small = if k < d { &g * g.transpose() } else { g.transpose() * &g } / k as f64;
    let mut eig = sorted_eigenvalues(small);
    eig.resize(d, 0.0);
    Ok(eig)
}

fn sorted_eigenvalues(mut m: DMatrix<f64>) -> Vec<f64> {
    m.fill_upper_triangle_with_lower_triangle();
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| b.total_cmp(a));
    e
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn eigenspectrum(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(NavqError::Usage(format!("eigenspectrum needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(sorted_eigenvalues(m.clone()))
}

pub fn kappa(gamma: f64, n_data: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(NavqError::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if n_data < 3 {
        return Err(NavqError::Config("n_data must be >= 3".into()));
    }
    let n = n_data as f64;
    let k = gamma * n / (2.0 * std::f64::consts::PI * n.ln());
    if k <= 1.0 {
        return Err(NavqError::Config(format!("kappa = {k} <= 1; increase gamma or n_data")));
    }
    Ok(k)
}

/// Effective dimension from already-normalized spectra (one per θ sample).
pub fn ed_from_spectra(spectra: &[Vec<f64>], kappa: f64) -> f64 {
    if spectra.is_empty() {
        return 0.0;
    }
    let half_logdets: Vec<f64> =
        spectra.iter().map(|s| 0.5 * s.iter().map(|l| (kappa * l.max(0.0)).ln_1p()).sum::<f64>()).collect();
    let max = half_logdets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + half_logdets.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    2.0 * (lse - (spectra.len() as f64).ln()) / kappa.ln()
}

/// Normalizes raw FIM spectra so the mean trace is `d`. Returns `None` when
/// every trace is zero.
pub fn normalize_spectra(spectra: &[Vec<f64>], d: usize) -> Option<Vec<Vec<f64>>> {
    let mean_trace = spectra.iter().map(|s| s.iter().sum::<f64>()).sum::<f64>() / spectra.len() as f64;
    if !(mean_trace > 0.0) {
        return None;
    }
    let scale = d as f64 / mean_trace;
    Some(spectra.iter().map(|s| s.iter().map(|l| l * scale).collect()).collect())
}

/// Returns `(ED, ED / d)` for raw FIM spectra over ≥ 2 θ samples.
pub fn effective_dimension(spectra: &[Vec<f64>], d: usize, gamma: f64, n_data: usize) -> Result<(f64, f64)> {
    if spectra.len() < 2 {
        return Err(NavqError::Usage("effective dimension needs at least 2 parameter samples".into()));
    }
    if d == 0 || spectra.iter().any(|s| s.len() != d) {
        return Err(NavqError::Input(format!("every spectrum must have {d} eigenvalues")));
    }
    let k = kappa(gamma, n_data)?;
    let ed = match normalize_spectra(spectra, d) {
        Some(n) => ed_from_spectra(&n, k),
        None => 0.0,
    };
    Ok((ed, ed / d as f64))
}

/// Same as [`effective_dimension`] but over full matrices.
pub fn effective_dimension_of(fims: &[DMatrix<f64>], gamma: f64, n_data: usize) -> Result<(f64, f64)> {
    let d = fims.first().map(|m| m.nrows()).unwrap_or(0);
    let spectra = fims.iter().map(eigenspectrum).collect::<Result<Vec<_>>>()?;
    effective_dimension(&spectra, d, gamma, n_data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimConfig {
    #[serde(default = "d_theta_samples")]
    pub theta_samples: usize,
    #[serde(default = "d_inputs")]
    pub inputs: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_n_data")]
    pub n_data: usize,
}

fn d_theta_samples() -> usize {
    20
}
fn d_inputs() -> usize {
    200
}
fn d_gamma() -> f64 {
    1.0
}
fn d_n_data() -> usize {
    3690
}

impl Default for FimConfig {
    fn default() -> Self {
        FimConfig { theta_samples: d_theta_samples(), inputs: d_inputs(), gamma: d_gamma(), n_data: d_n_data() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimReport {
    pub d: usize,
    pub theta_samples: usize,
    pub inputs: usize,
    pub gamma: f64,
    pub n_data: usize,
    pub kappa: f64,
    pub effective_dimension: f64,
    pub normalized_effective_dimension: f64,
    /// Mean over θ samples of the sorted normalized spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// Raw trace of F̂ per θ sample.
    pub traces: Vec<f64>,
    /// Smallest raw eigenvalue over all θ samples.
    pub min_eigenvalue: f64,
}

/// Samples θ from the model's cube, evaluates gradients on `inputs` and
/// reports the effective dimension.
pub fn fim_report(model: &dyn ValueModel, inputs: &[Vec<f64>], cfg: &FimConfig, rng: &mut dyn rand::RngCore) -> Result<FimReport> {
    if inputs.is_empty() {
        return Err(NavqError::Usage("Fisher information needs at least one input".into()));
    }
    let d = model.num_params();
    let k = kappa(cfg.gamma, cfg.n_data)?;
    let mut spectra = Vec::with_capacity(cfg.theta_samples);
    for _ in 0..cfg.theta_samples {
        let params = model.sample_params(rng);
        let grads = inputs.iter().map(|x| model.value_gradient(&params, x)).collect::<Result<Vec<_>>>()?;
        spectra.push(fim_spectrum(&grads)?);
    }
    let (ed, norm) = effective_dimension(&spectra, d, cfg.gamma, cfg.n_data)?;
    let traces: Vec<f64> = spectra.iter().map(|s| s.iter().sum()).collect();
    let min_eigenvalue = spectra.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let mut eigenvalues = vec![0.0; d];
    if let Some(normed) = normalize_spectra(&spectra, d) {
        for s in &normed {
            for (acc, v) in eigenvalues.iter_mut().zip(s) {
                *acc += v / normed.len() as f64;
            }
        }
    }
    Ok(FimReport {
        d,
        theta_samples: cfg.theta_samples,
        inputs: inputs.len(),
        gamma: cfg.gamma,
        n_data: cfg.n_data,
        kappa: k,
        effective_dimension: ed,
        normalized_effective_dimension: norm,
        eigenvalues,
        traces,
        min_eigenvalue,
    })
}

/// Uniform inputs in `[-1, 1]^dim`, the range of an LSTM hidden state.
pub fn uniform_inputs<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect()
}

/// Trailing moving average; the first `window − 1` points average the
/// values available so far.
pub fn smooth_curve(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(NavqError::Usage("smoothing window must be >= 1".into()));
    }
    let out = (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    Ok(out)
}

/// Trapezoidal area with unit spacing.
pub fn auc(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(NavqError::Usage("AUC needs at least two points".into()));
    }
    Ok(curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub window: usize,
    pub episodes: usize,
    pub runs: usize,
    /// True when runs had different lengths and were cut to the shortest.
    pub truncated: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// AUC of each run's smoothed curve.
    pub aucs: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Smooths every run, then reports per-episode mean/std/min/max of the
/// smoothed curves and the mean/std of their AUCs. Standard deviations are
/// population (divide by the number of runs).
pub fn aggregate_runs(runs: &[Vec<f64>], window: usize) -> Result<CurveStats> {
    if runs.is_empty() {
        return Err(NavqError::Usage("no runs to aggregate".into()));
    }
    let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    let truncated = runs.iter().any(|r| r.len() != len);
    let smoothed = runs.iter().map(|r| smooth_curve(&r[..len], window)).collect::<Result<Vec<_>>>()?;
    let aucs = smoothed.iter().map(|s| auc(s)).collect::<Result<Vec<_>>>()?;
    let (auc_mean, auc_std) = mean_std(&aucs);
    let mut stats = CurveStats {
        window,
        episodes: len,
        runs: runs.len(),
        truncated,
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
        min: Vec::with_capacity(len),
        max: Vec::with_capacity(len),
        aucs,
        auc_mean,
        auc_std,
    };
    for i in 0..len {
        let col: Vec<f64> = smoothed.iter().map(|s| s[i]).collect();
        let (m, s) = mean_std(&col);
        stats.mean.push(m);
        stats.std.push(s);
        stats.min.push(col.iter().cloned().fold(f64::INFINITY, f64::min));
        stats.max.push(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_curve(&[0.0, 10.0], 2).unwrap(), vec![0.0, 5.0]);
        assert_eq!(smooth_curve(&[3.0, 1.0, 4.0], 1).unwrap(), vec![3.0, 1.0, 4.0]);
        assert!(smooth_curve(&[2.5; 300], 100).unwrap().iter().all(|v| *v == 2.5));
        assert!(smooth_curve(&[1.0], 0).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[2.0; 11]).unwrap(), 20.0);
        assert_eq!(auc(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(auc(&[1.0]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_runs(&[vec![1.0, 1.0], vec![3.0, 3.0]], 100).unwrap();
        assert_eq!(s.mean, vec![2.0, 2.0]);
        assert_eq!(s.auc_mean, 2.0);
        let one = aggregate_runs(&[vec![1.0, 4.0, 2.0]], 1).unwrap();
        assert_eq!(one.mean, vec![1.0, 4.0, 2.0]);
        assert!(one.std.iter().all(|v| *v == 0.0));
        assert!(aggregate_runs(&[], 10).is_err());
        let cut = aggregate_runs(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0]], 10).unwrap();
        assert!(cut.truncated);
        assert_eq!(cut.episodes, 2);
    }

    #[test]
    fn fim_of_linear_model_is_second_moment() {
        // V = wᵀx ⇒ ∇_w V = x
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]];
        let f = empirical_fim(&xs).unwrap();
        let mut expect = DMatrix::zeros(2, 2);
        for x in &xs {
            let v = DMatrix::from_row_slice(2, 1, x);
            expect += &v * v.transpose();
        }
        expect /= 3.0;
        assert_relative_eq!(f, expect, epsilon = 1e-14);
        assert_eq!(empirical_fim(&[vec![0.0; 4]]).unwrap(), DMatrix::zeros(4, 4));
        assert!(empirical_fim(&[]).is_err());
    }

    #[test]
    fn gram_spectrum_matches_full_spectrum() {
        let g = vec![vec![1.0, 2.0, 0.5, -1.0], vec![0.0, 1.0, 1.0, 2.0]];
        let full = eigenspectrum(&empirical_fim(&g).unwrap()).unwrap();
        let gram = fim_spectrum(&g).unwrap();
        for (a, b) in full.iter().zip(&gram) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ed_closed_forms() {
        let d = 5;
        let n = 1000;
        let k = kappa(1.0, n).unwrap();
        let id = vec![DMatrix::<f64>::identity(d, d); 3];
        let (ed, _) = effective_dimension_of(&id, 1.0, n).unwrap();
        assert_relative_eq!(ed, d as f64 * (1.0 + k).ln() / k.ln(), epsilon = 1e-10);
        let zero = vec![DMatrix::<f64>::zeros(d, d); 2];
        assert_eq!(effective_dimension_of(&zero, 1.0, n).unwrap(), (0.0, 0.0));
        assert!(effective_dimension_of(&id[..1], 1.0, n).is_err());
        assert!(kappa(1.0, 10).is_err());
    }

    #[test]
    fn eigenspectrum_examples() {
        assert_eq!(eigenspectrum(&DMatrix::identity(4, 4)).unwrap(), vec![1.0; 4]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 0.0]));
        assert_eq!(eigenspectrum(&d).unwrap(), vec![3.0, 1.0, 0.0]);
        assert!(eigenspectrum(&DMatrix::zeros(2, 3)).is_err());
    }
}
