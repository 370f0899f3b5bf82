//! Statevector simulator for small parametrized circuits.
//!
//! Gates: RX, RY, RZ with the `exp(-i θ P / 2)` convention, CZ, and the bare
//! Paulis used for noise insertion. Qubit `q` is bit `q` of the basis index.
//! Expectations are exact; there is no shot sampling.
//!
//! Two noise models are supported on a per-trajectory basis: multiplicative
//! gate-angle error and a Pauli-twirl depolarizing channel sampled as random
//! X/Y/Z insertions. Averaging many seeded trajectories reproduces the
//! channel.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{config_err, NavqError, Result};

pub const MAX_QUBITS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cz,
}

impl GateKind {
    fn axis(self) -> Option<Pauli> {
        match self {
            GateKind::Rx => Some(Pauli::X),
            GateKind::Ry => Some(Pauli::Y),
            GateKind::Rz => Some(Pauli::Z),
            GateKind::Cz => None,
        }
    }
}

/// Where a rotation takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AngleSource {
    /// Index into the feature vector.
    Data(usize),
    /// Index into the trainable parameter vector.
    Param(usize),
    Fixed(f64),
}

/// One entry of a circuit plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub angle: Option<AngleSource>,
}

impl GateOp {
    pub fn rotation(kind: GateKind, target: usize, angle: AngleSource) -> Self {
        debug_assert!(kind != GateKind::Cz);
        GateOp { kind, target, control: None, angle: Some(angle) }
    }

    pub fn cz(control: usize, target: usize) -> Self {
        GateOp { kind: GateKind::Cz, target, control: Some(control), angle: None }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.target >= n_qubits {
            return config_err(format!("target qubit {} out of range for {} qubits", self.target, n_qubits));
        }
        match (self.kind, self.control, self.angle) {
            (GateKind::Cz, Some(c), None) => {
                if c >= n_qubits {
                    return config_err(format!("control qubit {c} out of range for {n_qubits} qubits"));
                }
                if c == self.target {
                    return config_err("CZ control and target must differ");
                }
                Ok(())
            }
            (GateKind::Cz, _, _) => config_err("CZ needs a control and no angle"),
            (_, None, Some(_)) => Ok(()),
            _ => config_err("rotations take an angle and no control"),
        }
    }

    fn resolve_angle(&self, x: &[f64], theta: &[f64]) -> Result<Option<f64>> {
        let Some(src) = self.angle else { return Ok(None) };
        let v = match src {
            AngleSource::Data(i) => *x
                .get(i)
                .ok_or_else(|| NavqError::Layout(format!("feature index {i} not in input of length {}", x.len())))?,
            AngleSource::Param(i) => *theta
                .get(i)
                .ok_or_else(|| NavqError::Layout(format!("parameter index {i} not in vector of length {}", theta.len())))?,
            AngleSource::Fixed(v) => v,
        };
        if !v.is_finite() {
            return Err(NavqError::Input(format!("non-finite rotation angle {v}")));
        }
        Ok(Some(v))
    }
}

/// A gate with a concrete angle, ready to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rot { axis: Pauli, target: usize, angle: f64 },
    Cz { control: usize, target: usize },
    Pauli { pauli: Pauli, target: usize },
}

impl Gate {
    pub fn rx(target: usize, angle: f64) -> Self {
        Gate::Rot { axis: Pauli::X, target, angle }
    }
    pub fn ry(target: usize, angle: f64) -> Self {
        Gate::Rot { axis: Pauli::Y, target, angle }
    }
    pub fn rz(target: usize, angle: f64) -> Self {
        Gate::Rot { axis: Pauli::Z, target, angle }
    }

    fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            Gate::Rot { target, .. } | Gate::Pauli { target, .. } => (target, None),
            Gate::Cz { control, target } => (target, Some(control)),
        }
    }

    fn inverse(&self) -> Gate {
        match *self {
            Gate::Rot { axis, target, angle } => Gate::Rot { axis, target, angle: -angle },
            g => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩ on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return config_err(format!("qubit count {n_qubits} outside 1..={MAX_QUBITS}"));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return config_err(format!("qubit {q} out of range for {} qubits", self.n_qubits));
        }
        Ok(())
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        let (t, c) = gate.qubits();
        self.check_qubit(t)?;
        if let Some(c) = c {
            self.check_qubit(c)?;
            if c == t {
                return config_err("CZ control and target must differ");
            }
        }
        if let Gate::Rot { angle, .. } = gate {
            if !angle.is_finite() {
                return Err(NavqError::Input(format!("non-finite rotation angle {angle}")));
            }
        }
        self.apply_unchecked(gate);
        Ok(())
    }

    fn apply_unchecked(&mut self, gate: &Gate) {
        match *gate {
            Gate::Rot { axis, target, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let m = match axis {
                    Pauli::X => [
                        [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                        [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
                    ],
                    Pauli::Y => [
                        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                    ],
                    Pauli::Z => [[Complex64::new(c, -s), ZERO], [ZERO, Complex64::new(c, s)]],
                };
                self.apply_1q(target, &m);
            }
            Gate::Pauli { pauli, target } => {
                let bit = 1usize << target;
                for i in 0..self.amps.len() {
                    if i & bit != 0 {
                        continue;
                    }
                    let j = i | bit;
                    let (a0, a1) = (self.amps[i], self.amps[j]);
                    match pauli {
                        Pauli::X => {
                            self.amps[i] = a1;
                            self.amps[j] = a0;
                        }
                        Pauli::Y => {
                            self.amps[i] = Complex64::new(a1.im, -a1.re);
                            self.amps[j] = Complex64::new(-a0.im, a0.re);
                        }
                        Pauli::Z => self.amps[j] = -a1,
                    }
                }
            }
            Gate::Cz { control, target } => {
                let mask = (1usize << control) | (1usize << target);
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if i & mask == mask {
                        *a = -*a;
                    }
                }
            }
        }
    }

    fn apply_1q(&mut self, target: usize, m: &[[Complex64; 2]; 2]) {
        let bit = 1usize << target;
        for i in 0..self.amps.len() {
            if i & bit != 0 {
                continue;
            }
            let j = i | bit;
            let (a0, a1) = (self.amps[i], self.amps[j]);
            self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amps[j] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    /// ⟨Z_q⟩.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        Ok(self.expectation_z_unchecked(qubit))
    }

    fn expectation_z_unchecked(&self, qubit: usize) -> f64 {
        let bit = 1usize << qubit;
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum()
    }

    pub fn expectations_z(&self) -> Vec<f64> {
        (0..self.n_qubits).map(|q| self.expectation_z_unchecked(q)).collect()
    }

    /// Applies Σ_q w_q Z_q to the state (not unitary; used for adjoint seeds).
    fn weighted_z(&self, weights: &[f64]) -> Vec<Complex64> {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let s: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(q, w)| if i & (1 << q) == 0 { *w } else { -*w })
                    .sum();
                *a * s
            })
            .collect()
    }
}

/// Free-function form of [`StateVector::new`].
pub fn init_state(n_qubits: usize) -> Result<StateVector> {
    StateVector::new(n_qubits)
}

pub fn apply_gate(state: &mut StateVector, gate: &Gate) -> Result<()> {
    state.apply(gate)
}

pub fn expectation_z(state: &StateVector, qubit: usize) -> Result<f64> {
    state.expectation_z(qubit)
}

// ---------------------------------------------------------------------------
// noise

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateErrorSpec {
    /// Relative magnitude of the multiplicative angle error.
    #[serde(default = "default_gate_error_scale")]
    pub scale: f64,
}

fn default_gate_error_scale() -> f64 {
    0.01
}

impl Default for GateErrorSpec {
    fn default() -> Self {
        GateErrorSpec { scale: default_gate_error_scale() }
    }
}

/// Where depolarizing events are injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepolarizingPlacement {
    /// After each circuit segment (a QIDEP sublayer), on every qubit.
    #[default]
    PerSegment,
    /// After every gate, on the qubits that gate touched.
    PerGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepolarizingSpec {
    pub p: f64,
    #[serde(default)]
    pub placement: DepolarizingPlacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub gate_error: Option<GateErrorSpec>,
    #[serde(default)]
    pub depolarizing: Option<DepolarizingSpec>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.gate_error.is_none() && self.depolarizing.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gate_error {
            if !(g.scale >= 0.0 && g.scale.is_finite()) {
                return config_err(format!("gate error scale must be >= 0, got {}", g.scale));
            }
        }
        if let Some(d) = self.depolarizing {
            check_probability(d.p)?;
        }
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return config_err(format!("depolarizing probability {p} outside [0, 1]"));
    }
    Ok(())
}

/// θ_k ← θ_k (1 + scale·δ_k), δ_k ~ U(0, 1) drawn independently per entry.
pub fn perturb_gate_params<R: Rng + ?Sized>(theta: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    theta.iter().map(|t| perturb_angle(*t, scale, rng)).collect()
}

fn perturb_angle<R: Rng + ?Sized>(angle: f64, scale: f64, rng: &mut R) -> f64 {
    let delta: f64 = rng.gen();
    angle * (1.0 + scale * delta)
}

/// With probability `p` apply X, Y or Z (uniformly) to `qubit`.
/// Returns the Pauli applied, if any.
pub fn depolarize_step<R: Rng + ?Sized>(
    state: &mut StateVector,
    qubit: usize,
    p: f64,
    rng: &mut R,
) -> Result<Option<Pauli>> {
    check_probability(p)?;
    state.check_qubit(qubit)?;
    let pauli = sample_depolarizing(p, rng);
    if let Some(pauli) = pauli {
        state.apply_unchecked(&Gate::Pauli { pauli, target: qubit });
    }
    Ok(pauli)
}

fn sample_depolarizing<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Option<Pauli> {
    // p = 0 consumes no randomness so noiseless paths stay aligned.
    if p <= 0.0 {
        return None;
    }
    let u: f64 = rng.gen();
    if u >= p {
        return None;
    }
    Some(match rng.gen_range(0..3) {
        0 => Pauli::X,
        1 => Pauli::Y,
        _ => Pauli::Z,
    })
}

// ---------------------------------------------------------------------------
// circuits

/// A validated gate plan together with the sizes of the vectors it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    n_features: usize,
    n_params: usize,
    ops: Vec<GateOp>,
    /// Exclusive end offsets of noise segments; the last equals `ops.len()`.
    segments: Vec<usize>,
}

impl Circuit {
    pub fn new(n_qubits: usize, n_features: usize, n_params: usize, ops: Vec<GateOp>) -> Result<Self> {
        let len = ops.len();
        Self::with_segments(n_qubits, n_features, n_params, ops, vec![len])
    }

    pub fn with_segments(
        n_qubits: usize,
        n_features: usize,
        n_params: usize,
        ops: Vec<GateOp>,
        mut segments: Vec<usize>,
    ) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return config_err(format!("qubit count {n_qubits} outside 1..={MAX_QUBITS}"));
        }
        for op in &ops {
            op.validate(n_qubits)?;
            match op.angle {
                Some(AngleSource::Data(i)) if i >= n_features => {
                    return Err(NavqError::Layout(format!("feature index {i} >= {n_features}")))
                }
                Some(AngleSource::Param(i)) if i >= n_params => {
                    return Err(NavqError::Layout(format!("parameter index {i} >= {n_params}")))
                }
                _ => {}
            }
        }
        if segments.last() != Some(&ops.len()) {
            segments.push(ops.len());
        }
        if segments.windows(2).any(|w| w[0] > w[1]) || segments.iter().any(|&s| s > ops.len()) {
            return config_err("segment offsets must be non-decreasing and within the gate list");
        }
        Ok(Circuit { n_qubits, n_features, n_params, ops, segments })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn n_params(&self) -> usize {
        self.n_params
    }
    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }
    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    fn check_inputs(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(NavqError::Input(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        if theta.len() != self.n_params {
            return Err(NavqError::Input(format!("expected {} parameters, got {}", self.n_params, theta.len())));
        }
        Ok(())
    }

    /// Every declared parameter must drive at least one rotation.
    pub fn check_params_used(&self) -> Result<()> {
        let mut used = vec![false; self.n_params];
        for op in &self.ops {
            if let Some(AngleSource::Param(i)) = op.angle {
                used[i] = true;
            }
        }
        match used.iter().position(|u| !u) {
            Some(i) => Err(NavqError::Layout(format!("parameter {i} is not used by any gate"))),
            None => Ok(()),
        }
    }
}

/// A gate as executed in one trajectory, with the link back to the plan entry
/// whose angle it came from.
#[derive(Debug, Clone, Copy)]
struct Realized {
    gate: Gate,
    /// (plan index, d angle / d source value)
    origin: Option<(usize, f64)>,
}

/// Optional ±shift applied to one plan entry's angle (for parameter shift).
type Shift = Option<(usize, f64)>;

fn realize<R: Rng + ?Sized>(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    noise: &NoiseSpec,
    shift: Shift,
    rng: &mut R,
) -> Result<Vec<Realized>> {
    let mut out = Vec::with_capacity(circuit.ops.len() + circuit.n_qubits);
    let gate_scale = noise.gate_error.map(|g| g.scale);
    let depol = noise.depolarizing;
    let mut seg = circuit.segments.iter().peekable();
    // segments that end at 0 (empty leading segments)
    let inject = |out: &mut Vec<Realized>, qubits: &mut dyn Iterator<Item = usize>, rng: &mut R| {
        if let Some(d) = depol {
            for q in qubits {
                if let Some(pauli) = sample_depolarizing(d.p, rng) {
                    out.push(Realized { gate: Gate::Pauli { pauli, target: q }, origin: None });
                }
            }
        }
    };
    for (idx, op) in circuit.ops.iter().enumerate() {
        let gate = match op.resolve_angle(x, theta)? {
            Some(mut angle) => {
                if let Some((si, s)) = shift {
                    if si == idx {
                        angle += s;
                    }
                }
                let mut factor = 1.0;
                if let Some(scale) = gate_scale {
                    let delta: f64 = rng.gen();
                    factor = 1.0 + scale * delta;
                }
                let axis = op.kind.axis().expect("rotation has an axis");
                let origin = match op.angle {
                    Some(AngleSource::Fixed(_)) => None,
                    _ => Some((idx, factor)),
                };
                Realized { gate: Gate::Rot { axis, target: op.target, angle: angle * factor }, origin }
            }
            None => Realized {
                gate: Gate::Cz { control: op.control.expect("validated CZ"), target: op.target },
                origin: None,
            },
        };
        out.push(gate);
        if let Some(d) = depol {
            if d.placement == DepolarizingPlacement::PerGate {
                let mut qs = std::iter::once(op.target).chain(op.control);
                inject(&mut out, &mut qs, rng);
            }
        }
        while let Some(&&end) = seg.peek() {
            if end > idx + 1 {
                break;
            }
            seg.next();
            if matches!(depol, Some(d) if d.placement == DepolarizingPlacement::PerSegment) {
                let mut qs = 0..circuit.n_qubits;
                inject(&mut out, &mut qs, rng);
            }
        }
    }
    Ok(out)
}

fn simulate(n_qubits: usize, gates: &[Realized]) -> StateVector {
    let mut state = StateVector::new(n_qubits).expect("validated qubit count");
    for g in gates {
        state.apply_unchecked(&g.gate);
    }
    state
}

/// Runs the circuit on |0…0⟩ and returns (⟨Z_0⟩, …, ⟨Z_{n−1}⟩).
///
/// With noise enabled this is a single sampled trajectory; `rng` supplies
/// the gate-error draws and depolarizing events.
pub fn run_circuit<R: Rng + ?Sized>(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    circuit.check_inputs(x, theta)?;
    noise.validate()?;
    let gates = realize(circuit, x, theta, noise, None, rng)?;
    Ok(simulate(circuit.n_qubits, &gates).expectations_z())
}

/// Linear readout `bias + Σ w_i e_i`.
pub fn readout(expectations: &[f64], weights: &[f64], bias: f64) -> f64 {
    bias + expectations.iter().zip(weights).map(|(e, w)| e * w).sum::<f64>()
}

/// Value and gradients of the readout `V = b + Σ w_i ⟨Z_i⟩` for one circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGradient {
    pub value: f64,
    pub expectations: Vec<f64>,
    /// ∂V/∂θ.
    pub d_params: Vec<f64>,
    /// ∂V/∂x.
    pub d_features: Vec<f64>,
}

impl CircuitGradient {
    /// ∂V/∂w is the expectation vector itself; ∂V/∂b = 1.
    pub fn d_weights(&self) -> &[f64] {
        &self.expectations
    }
}

fn check_readout(circuit: &Circuit, weights: &[f64]) -> Result<()> {
    if weights.len() != circuit.n_qubits {
        return Err(NavqError::Input(format!(
            "readout has {} weights for {} qubits",
            weights.len(),
            circuit.n_qubits
        )));
    }
    Ok(())
}

/// Gradient by reverse-mode differentiation through the simulated state
/// (adjoint method). With noise enabled, one trajectory is sampled and the
/// gradient is exact for that trajectory.
pub fn backprop_gradient<R: Rng + ?Sized>(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    weights: &[f64],
    bias: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<CircuitGradient> {
    circuit.check_inputs(x, theta)?;
    check_readout(circuit, weights)?;
    noise.validate()?;
    let gates = realize(circuit, x, theta, noise, None, rng)?;
    let mut psi = simulate(circuit.n_qubits, &gates);
    let expectations = psi.expectations_z();
    let value = readout(&expectations, weights, bias);

    let mut lambda = StateVector { n_qubits: psi.n_qubits, amps: psi.weighted_z(weights) };
    let mut d_params = vec![0.0; circuit.n_params];
    let mut d_features = vec![0.0; circuit.n_features];
    for g in gates.iter().rev() {
        if let (Gate::Rot { axis, target, .. }, Some((idx, factor))) = (g.gate, g.origin) {
            // dV/dangle = Im⟨λ|P|ψ⟩ for U = exp(-i angle P / 2)
            let mut p_psi = psi.clone();
            p_psi.apply_unchecked(&Gate::Pauli { pauli: axis, target });
            let overlap: Complex64 = lambda.amps.iter().zip(&p_psi.amps).map(|(l, p)| l.conj() * p).sum();
            let d = overlap.im * factor;
            match circuit.ops[idx].angle {
                Some(AngleSource::Param(k)) => d_params[k] += d,
                Some(AngleSource::Data(j)) => d_features[j] += d,
                _ => {}
            }
        }
        let inv = g.gate.inverse();
        psi.apply_unchecked(&inv);
        lambda.apply_unchecked(&inv);
    }
    Ok(CircuitGradient { value, expectations, d_params, d_features })
}

fn shifted_value<R: Rng + ?Sized>(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    weights: &[f64],
    bias: f64,
    noise: &NoiseSpec,
    shift: Shift,
    rng: &mut R,
) -> Result<f64> {
    let gates = realize(circuit, x, theta, noise, shift, rng)?;
    Ok(readout(&simulate(circuit.n_qubits, &gates).expectations_z(), weights, bias))
}

/// Parameter-shift gradient of `V = b + Σ w_i ⟨Z_i⟩` with respect to θ
/// (noiseless). A parameter shared by several gates gets the sum of the
/// per-gate shift terms.
pub fn param_shift_gradient(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    weights: &[f64],
    bias: f64,
) -> Result<Vec<f64>> {
    circuit.check_params_used()?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    Ok(param_shift_full(circuit, x, theta, weights, bias, &NoiseSpec::none(), &mut rng)?.d_params)
}

/// Parameter-shift gradients for both θ and the data features. Every shifted
/// evaluation re-samples the noise when noise is enabled.
pub fn param_shift_full<R: Rng + ?Sized>(
    circuit: &Circuit,
    x: &[f64],
    theta: &[f64],
    weights: &[f64],
    bias: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<CircuitGradient> {
    circuit.check_inputs(x, theta)?;
    check_readout(circuit, weights)?;
    noise.validate()?;
    let gates = realize(circuit, x, theta, noise, None, rng)?;
    let expectations = simulate(circuit.n_qubits, &gates).expectations_z();
    let value = readout(&expectations, weights, bias);
    let mut d_params = vec![0.0; circuit.n_params];
    let mut d_features = vec![0.0; circuit.n_features];
    for (idx, op) in circuit.ops.iter().enumerate() {
        let slot = match op.angle {
            Some(AngleSource::Param(k)) => &mut d_params[k],
            Some(AngleSource::Data(j)) => &mut d_features[j],
            _ => continue,
        };
        let plus = shifted_value(circuit, x, theta, weights, bias, noise, Some((idx, FRAC_PI_2)), rng)?;
        let minus = shifted_value(circuit, x, theta, weights, bias, noise, Some((idx, -FRAC_PI_2)), rng)?;
        *slot += 0.5 * (plus - minus);
    }
    Ok(CircuitGradient { value, expectations, d_params, d_features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use std::f64::consts::PI;

    fn state_after(n: usize, gates: &[Gate]) -> StateVector {
        let mut s = StateVector::new(n).unwrap();
        for g in gates {
            s.apply(g).unwrap();
        }
        s
    }

    #[test]
    fn init_state_is_ground_state() {
        let s = init_state(1).unwrap();
        assert_eq!(s.amplitudes(), &[Complex64::new(1.0, 0.0), ZERO]);
        let s = init_state(2).unwrap();
        assert_eq!(s.amplitudes().len(), 4);
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert!((init_state(4).unwrap().norm_sqr() - 1.0).abs() < 1e-15);
        assert!(init_state(0).is_err());
        assert!(init_state(13).is_err());
    }

    #[test]
    fn single_qubit_rotations() {
        let s = state_after(1, &[Gate::ry(0, PI)]);
        assert!((s.expectation_z(0).unwrap() + 1.0).abs() < 1e-12);
        for theta in [0.3, 1.7, -2.2] {
            let s = state_after(1, &[Gate::rz(0, theta)]);
            assert!((s.expectation_z(0).unwrap() - 1.0).abs() < 1e-12);
        }
        let s = state_after(1, &[Gate::ry(0, PI / 2.0)]);
        assert!(s.expectation_z(0).unwrap().abs() < 1e-12);
        let s = state_after(1, &[Gate::Pauli { pauli: Pauli::X, target: 0 }]);
        assert_eq!(s.expectation_z(0).unwrap(), -1.0);
    }

    #[test]
    fn cz_flips_phase_of_11_only() {
        let mut s = state_after(2, &[Gate::rx(0, PI), Gate::rx(1, PI)]);
        let before: Vec<f64> = s.amplitudes().iter().map(|a| a.norm_sqr()).collect();
        let amp = s.amplitudes()[3];
        s.apply(&Gate::Cz { control: 0, target: 1 }).unwrap();
        assert!((s.amplitudes()[3] + amp).norm() < 1e-15);
        let after: Vec<f64> = s.amplitudes().iter().map(|a| a.norm_sqr()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn invalid_indices_rejected() {
        let mut s = StateVector::new(2).unwrap();
        assert!(matches!(s.apply(&Gate::rx(2, 0.1)), Err(NavqError::Config(_))));
        assert!(s.apply(&Gate::Cz { control: 1, target: 1 }).is_err());
        assert!(s.expectation_z(5).is_err());
        assert!(GateOp::cz(0, 0).validate(2).is_err());
        assert!(Circuit::new(2, 0, 0, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).is_err());
    }

    #[test]
    fn run_circuit_basics() {
        let mut rng = substream(1, Stream::Noise);
        let empty = Circuit::new(4, 0, 0, vec![]).unwrap();
        assert_eq!(run_circuit(&empty, &[], &[], &NoiseSpec::none(), &mut rng).unwrap(), vec![1.0; 4]);
        let c = Circuit::new(1, 0, 1, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).unwrap();
        let e = run_circuit(&c, &[], &[1.0], &NoiseSpec::none(), &mut rng).unwrap();
        assert!((e[0] - 1.0f64.cos()).abs() < 1e-12);
        assert!(matches!(
            run_circuit(&c, &[], &[], &NoiseSpec::none(), &mut rng),
            Err(NavqError::Input(_))
        ));
    }

    #[test]
    fn single_ry_param_shift() {
        let c = Circuit::new(1, 0, 1, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).unwrap();
        let g = param_shift_gradient(&c, &[], &[0.0], &[1.0], 0.0).unwrap();
        assert!(g[0].abs() < 1e-15);
        let g = param_shift_gradient(&c, &[], &[FRAC_PI_2], &[1.0], 0.0).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unused_parameter_is_layout_error() {
        let c = Circuit::new(1, 0, 2, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).unwrap();
        assert!(matches!(param_shift_gradient(&c, &[], &[0.1, 0.2], &[1.0], 0.0), Err(NavqError::Layout(_))));
    }

    #[test]
    fn shared_parameter_sums_shift_terms() {
        // RY(θ) RY(θ) = RY(2θ) so dV/dθ = -2 sin 2θ
        let op = GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0));
        let c = Circuit::new(1, 0, 1, vec![op, op]).unwrap();
        let t = 0.4;
        let g = param_shift_gradient(&c, &[], &[t], &[1.0], 0.0).unwrap();
        assert!((g[0] + 2.0 * (2.0 * t).sin()).abs() < 1e-12);
        let mut rng = substream(0, Stream::Noise);
        let b = backprop_gradient(&c, &[], &[t], &[1.0], 0.0, &NoiseSpec::none(), &mut rng).unwrap();
        assert!((b.d_params[0] - g[0]).abs() < 1e-12);
    }

    #[test]
    fn perturbation_ranges() {
        let mut rng = substream(3, Stream::Noise);
        for _ in 0..1000 {
            let p = perturb_gate_params(&[0.0, 1.0, -2.0], 0.01, &mut rng);
            assert_eq!(p[0], 0.0);
            assert!((1.0..1.01).contains(&p[1]));
            assert!(p[2] > -2.02 && p[2] <= -2.0);
        }
    }

    #[test]
    fn depolarize_zero_is_identity_and_bad_p_rejected() {
        let mut rng = substream(3, Stream::Noise);
        let mut s = state_after(1, &[Gate::ry(0, 0.7)]);
        let before = s.clone();
        assert_eq!(depolarize_step(&mut s, 0, 0.0, &mut rng).unwrap(), None);
        assert_eq!(s, before);
        assert!(depolarize_step(&mut s, 0, 1.5, &mut rng).is_err());
        assert!(depolarize_step(&mut s, 0, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_spec_validation() {
        let bad = NoiseSpec { depolarizing: Some(DepolarizingSpec { p: 2.0, placement: Default::default() }), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = NoiseSpec { gate_error: Some(GateErrorSpec { scale: -1.0 }), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noisy_runs_are_deterministic_per_seed() {
        let ops = vec![
            GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0)),
            GateOp::cz(0, 1),
            GateOp::rotation(GateKind::Rx, 1, AngleSource::Data(0)),
        ];
        let c = Circuit::new(2, 1, 1, ops).unwrap();
        let noise = NoiseSpec {
            gate_error: Some(GateErrorSpec::default()),
            depolarizing: Some(DepolarizingSpec { p: 0.2, placement: DepolarizingPlacement::PerGate }),
        };
        let a = run_circuit(&c, &[0.3], &[0.8], &noise, &mut substream(9, Stream::Noise)).unwrap();
        let b = run_circuit(&c, &[0.3], &[0.8], &noise, &mut substream(9, Stream::Noise)).unwrap();
        assert_eq!(a, b);
    }
}
