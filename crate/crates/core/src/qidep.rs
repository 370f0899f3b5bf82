//! Qubit-independent data encoding and processing (QIDEP) circuits.
//!
//! A `p`-dimensional input is zero-padded to `3nk` entries and split into
//! `k = ⌈p / 3n⌉` slices of `3n` features. Each layer runs `k` sublayers; a
//! sublayer encodes one slice with three rotations per qubit and then applies
//! a trainable RY+RZ block on every qubit followed by a CZ chain. The whole
//! padded vector is re-uploaded in every layer.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{config_err, NavqError, Result};
use crate::qsim::{AngleSource, Circuit, GateKind, GateOp, MAX_QUBITS};

/// Axis order of the three data rotations applied to each qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingAxes {
    /// RZ, RY, RZ (Euler decomposition of a general single-qubit unitary).
    #[default]
    Zyz,
    Xyz,
}

impl EncodingAxes {
    fn kinds(self) -> [GateKind; 3] {
        match self {
            EncodingAxes::Zyz => [GateKind::Rz, GateKind::Ry, GateKind::Rz],
            EncodingAxes::Xyz => [GateKind::Rx, GateKind::Ry, GateKind::Rz],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QidepLayout {
    pub p: usize,
    pub n_qubits: usize,
    pub layers: usize,
    pub sublayers: usize,
    pub pad_len: usize,
    pub pqc_param_count: usize,
    #[serde(default)]
    pub axes: EncodingAxes,
}

/// Feature and parameter ranges consumed by one sublayer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SublayerSpec {
    pub layer: usize,
    pub sublayer: usize,
    pub features: std::ops::Range<usize>,
    pub params: std::ops::Range<usize>,
}

pub fn plan_layout(p: usize, n_qubits: usize, layers: usize) -> Result<QidepLayout> {
    if p < 1 || n_qubits < 1 || layers < 1 {
        return config_err(format!("QIDEP needs p, n, L >= 1 (got p={p}, n={n_qubits}, L={layers})"));
    }
    if n_qubits > MAX_QUBITS {
        return config_err(format!("{n_qubits} qubits exceeds the simulator limit of {MAX_QUBITS}"));
    }
    let slice = 3 * n_qubits;
    let sublayers = p.div_ceil(slice);
    Ok(QidepLayout {
        p,
        n_qubits,
        layers,
        sublayers,
        pad_len: slice * sublayers - p,
        pqc_param_count: layers * sublayers * 2 * n_qubits,
        axes: EncodingAxes::default(),
    })
}

impl QidepLayout {
    pub fn with_axes(mut self, axes: EncodingAxes) -> Self {
        self.axes = axes;
        self
    }

    pub fn padded_len(&self) -> usize {
        3 * self.n_qubits * self.sublayers
    }

    /// PQC parameters plus the `n` readout weights and one bias.
    pub fn critic_param_count(&self) -> usize {
        self.pqc_param_count + self.n_qubits + 1
    }

    pub fn sublayer_specs(&self) -> Vec<SublayerSpec> {
        let slice = 3 * self.n_qubits;
        let per_sub = 2 * self.n_qubits;
        let mut out = Vec::with_capacity(self.layers * self.sublayers);
        for l in 0..self.layers {
            for m in 0..self.sublayers {
                let s = l * self.sublayers + m;
                out.push(SublayerSpec {
                    layer: l,
                    sublayer: m,
                    features: m * slice..(m + 1) * slice,
                    params: s * per_sub..(s + 1) * per_sub,
                });
            }
        }
        out
    }

    /// Index of the RY (`which = 0`) or RZ (`which = 1`) parameter of `qubit`
    /// in sublayer `m` of layer `l`.
    pub fn param_index(&self, l: usize, m: usize, qubit: usize, which: usize) -> usize {
        ((l * self.sublayers + m) * self.n_qubits + qubit) * 2 + which
    }
}

/// Emits the gate plan. Sublayer boundaries become noise segments.
pub fn build_circuit(layout: &QidepLayout) -> Circuit {
    let n = layout.n_qubits;
    let kinds = layout.axes.kinds();
    let mut ops = Vec::new();
    let mut segments = Vec::with_capacity(layout.layers * layout.sublayers);
    for spec in layout.sublayer_specs() {
        for q in 0..n {
            let base = spec.features.start + 3 * q;
            for (r, kind) in kinds.iter().enumerate() {
                ops.push(GateOp::rotation(*kind, q, AngleSource::Data(base + r)));
            }
        }
        for q in 0..n {
            ops.push(GateOp::rotation(GateKind::Ry, q, AngleSource::Param(layout.param_index(spec.layer, spec.sublayer, q, 0))));
            ops.push(GateOp::rotation(GateKind::Rz, q, AngleSource::Param(layout.param_index(spec.layer, spec.sublayer, q, 1))));
        }
        for q in 0..n.saturating_sub(1) {
            ops.push(GateOp::cz(q, q + 1));
        }
        segments.push(ops.len());
    }
    Circuit::with_segments(n, layout.padded_len(), layout.pqc_param_count, ops, segments)
        .expect("QIDEP plan is valid by construction")
}

pub fn pad_input(x: &[f64], layout: &QidepLayout) -> Result<Vec<f64>> {
    if x.len() != layout.p {
        return Err(NavqError::Input(format!("expected {} features, got {}", layout.p, x.len())));
    }
    let mut out = Vec::with_capacity(layout.padded_len());
    out.extend_from_slice(x);
    out.resize(layout.padded_len(), 0.0);
    Ok(out)
}

/// Optional pre-scaling of features before encoding: clamp to [−1, 1] then ×π.
/// Returns the scaled value and its derivative with respect to the input.
pub fn prescale(v: f64) -> (f64, f64) {
    if (-1.0..=1.0).contains(&v) {
        (v * PI, PI)
    } else {
        (v.clamp(-1.0, 1.0) * PI, 0.0)
    }
}
