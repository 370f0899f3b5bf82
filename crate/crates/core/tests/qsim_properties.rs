//! Simulator properties: unitarity, analytic expectations, agreement of the
//! three gradient paths and trajectory noise against a density-matrix oracle.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use navq::qidep::{build_circuit, pad_input, plan_layout};
use navq::qsim::*;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn gate_strategy(n: usize) -> impl Strategy<Value = Gate> {
    let rot = (0..3usize, 0..n, -10.0..10.0f64).prop_map(|(k, q, a)| match k {
        0 => Gate::rx(q, a),
        1 => Gate::ry(q, a),
        _ => Gate::rz(q, a),
    });
    if n == 1 {
        rot.boxed()
    } else {
        prop_oneof![3 => rot, 1 => (0..n, 1..n).prop_map(move |(c, d)| Gate::Cz { control: c, target: (c + d) % n })].boxed()
    }
}

fn circuit_strategy() -> impl Strategy<Value = (usize, Vec<Gate>)> {
    (1..=6usize).prop_flat_map(|n| (Just(n), prop::collection::vec(gate_strategy(n), 0..40)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norm_is_preserved((n, gates) in circuit_strategy()) {
        let mut s = init_state(n).unwrap();
        for g in &gates {
            apply_gate(&mut s, g).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(s.amplitudes().len(), 1 << n);
        for q in 0..n {
            let z = expectation_z(&s, q).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
        }
    }

    #[test]
    fn ry_expectation_is_cosine(theta in -4.0 * PI..4.0 * PI) {
        let mut s = init_state(1).unwrap();
        apply_gate(&mut s, &Gate::ry(0, theta)).unwrap();
        prop_assert!((expectation_z(&s, 0).unwrap() - theta.cos()).abs() < 1e-12);
    }

    #[test]
    fn rx_expectation_is_cosine_on_any_qubit(theta in -PI..PI, n in 2..=5usize, q in 0..5usize) {
        let q = q % n;
        let mut s = init_state(n).unwrap();
        apply_gate(&mut s, &Gate::rx(q, theta)).unwrap();
        for k in 0..n {
            let want = if k == q { theta.cos() } else { 1.0 };
            prop_assert!((expectation_z(&s, k).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[derive(Debug, Clone)]
struct QidepCase {
    p: usize,
    n: usize,
    layers: usize,
    x: Vec<f64>,
    theta: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn qidep_case() -> impl Strategy<Value = QidepCase> {
    (1..=4usize, 1..=2usize, 1..=20usize, any::<u64>()).prop_map(|(n, layers, p, seed)| {
        let layout = plan_layout(p, n, layers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QidepCase {
            p,
            n,
            layers,
            x: (0..p).map(|_| rng.gen_range(-PI..PI)).collect(),
            theta: (0..layout.pqc_param_count).map(|_| rng.gen_range(-PI..PI)).collect(),
            weights: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            bias: rng.gen_range(-1.0..1.0),
        }
    })
}

fn value_at(circuit: &Circuit, x: &[f64], theta: &[f64], w: &[f64], b: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    readout(&run_circuit(circuit, x, theta, &NoiseSpec::none(), &mut rng).unwrap(), w, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Parameter shift, finite differences and adjoint backprop agree.
    #[test]
    fn gradient_paths_agree(case in qidep_case()) {
        let layout = plan_layout(case.p, case.n, case.layers).unwrap();
        let circuit = build_circuit(&layout);
        let x = pad_input(&case.x, &layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bp = backprop_gradient(&circuit, &x, &case.theta, &case.weights, case.bias, &NoiseSpec::none(), &mut rng).unwrap();
        let ps = param_shift_gradient(&circuit, &x, &case.theta, &case.weights, case.bias).unwrap();
        let ps_full = param_shift_full(&circuit, &x, &case.theta, &case.weights, case.bias, &NoiseSpec::none(), &mut rng).unwrap();
        let h = 1e-5;
        for k in 0..case.theta.len() {
            let mut tp = case.theta.clone();
            tp[k] += h;
            let mut tm = case.theta.clone();
            tm[k] -= h;
            let fd = (value_at(&circuit, &x, &tp, &case.weights, case.bias) - value_at(&circuit, &x, &tm, &case.weights, case.bias)) / (2.0 * h);
            prop_assert!((ps[k] - bp.d_params[k]).abs() < 1e-6, "shift {} vs backprop {}", ps[k], bp.d_params[k]);
            prop_assert!((fd - bp.d_params[k]).abs() < 1e-6, "fd {} vs backprop {}", fd, bp.d_params[k]);
            prop_assert!((ps_full.d_params[k] - ps[k]).abs() < 1e-12);
        }
        for j in 0..x.len() {
            prop_assert!((ps_full.d_features[j] - bp.d_features[j]).abs() < 1e-6);
        }
        prop_assert!((bp.value - value_at(&circuit, &x, &case.theta, &case.weights, case.bias)).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// density-matrix oracle

type Mat = DMatrix<Complex64>;

fn single(kind: GateKind, angle: f64) -> [[Complex64; 2]; 2] {
    let (co, si) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    let i = Complex64::i();
    match kind {
        GateKind::Rx => [[c(co), -i * si], [-i * si, c(co)]],
        GateKind::Ry => [[c(co), c(-si)], [c(si), c(co)]],
        GateKind::Rz => [[(-i * angle / 2.0).exp(), c(0.0)], [c(0.0), (i * angle / 2.0).exp()]],
        GateKind::Cz => unreachable!(),
    }
}

fn pauli(p: usize) -> [[Complex64; 2]; 2] {
    let i = Complex64::i();
    match p {
        0 => [[c(0.0), c(1.0)], [c(1.0), c(0.0)]],
        1 => [[c(0.0), -i], [i, c(0.0)]],
        _ => [[c(1.0), c(0.0)], [c(0.0), c(-1.0)]],
    }
}

/// Full operator acting as `u` on qubit `q` (bit `q` of the index).
fn embed(u: [[Complex64; 2]; 2], q: usize, n: usize) -> Mat {
    let d = 1 << n;
    Mat::from_fn(d, d, |r, col| {
        if (r & !(1 << q)) != (col & !(1 << q)) {
            c(0.0)
        } else {
            u[(r >> q) & 1][(col >> q) & 1]
        }
    })
}

fn cz_op(a: usize, b: usize, n: usize) -> Mat {
    let d = 1 << n;
    Mat::from_fn(d, d, |r, col| {
        if r != col {
            c(0.0)
        } else if (r >> a) & 1 == 1 && (r >> b) & 1 == 1 {
            c(-1.0)
        } else {
            c(1.0)
        }
    })
}

fn depolarize(rho: &Mat, q: usize, n: usize, p: f64) -> Mat {
    let mut out = rho * c(1.0 - p);
    for k in 0..3 {
        let m = embed(pauli(k), q, n);
        out += &m * rho * &m * c(p / 3.0);
    }
    out
}

fn z_expect(rho: &Mat, q: usize, n: usize) -> f64 {
    (embed(pauli(2), q, n) * rho).trace().re
}

/// Exact channel evolution of the circuit with the same injection points
/// as the trajectory sampler.
fn oracle(circuit: &Circuit, x: &[f64], theta: &[f64], d: DepolarizingSpec) -> Vec<f64> {
    let n = circuit.n_qubits();
    let dim = 1 << n;
    let mut rho = Mat::zeros(dim, dim);
    rho[(0, 0)] = c(1.0);
    let mut seg = circuit.segments().iter().peekable();
    for (idx, op) in circuit.ops().iter().enumerate() {
        let u = match (op.kind, op.angle) {
            (GateKind::Cz, _) => cz_op(op.control.unwrap(), op.target, n),
            (k, Some(AngleSource::Data(i))) => embed(single(k, x[i]), op.target, n),
            (k, Some(AngleSource::Param(i))) => embed(single(k, theta[i]), op.target, n),
            (k, Some(AngleSource::Fixed(a))) => embed(single(k, a), op.target, n),
            _ => unreachable!(),
        };
        rho = &u * rho * u.adjoint();
        if d.placement == DepolarizingPlacement::PerGate {
            for q in std::iter::once(op.target).chain(op.control) {
                rho = depolarize(&rho, q, n, d.p);
            }
        }
        while seg.peek().is_some_and(|&&end| end <= idx + 1) {
            seg.next();
            if d.placement == DepolarizingPlacement::PerSegment {
                for q in 0..n {
                    rho = depolarize(&rho, q, n, d.p);
                }
            }
        }
    }
    (0..n).map(|q| z_expect(&rho, q, n)).collect()
}

fn two_qubit_circuit() -> (Circuit, Vec<f64>) {
    let ops = vec![
        GateOp::rotation(GateKind::Ry, 0, AngleSource::Data(0)),
        GateOp::rotation(GateKind::Rx, 1, AngleSource::Data(1)),
        GateOp::cz(0, 1),
        GateOp::rotation(GateKind::Ry, 1, AngleSource::Data(2)),
        GateOp::rotation(GateKind::Rz, 0, AngleSource::Data(3)),
        GateOp::rotation(GateKind::Rx, 0, AngleSource::Data(4)),
    ];
    (Circuit::new(2, 5, 0, ops).unwrap(), vec![0.7, -1.1, 0.4, 2.0, 0.5])
}

/// Mean and standard error of each qubit's ⟨Z⟩ over `n` trajectories.
fn trajectory_stats(circuit: &Circuit, x: &[f64], noise: &NoiseSpec, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = circuit.n_qubits();
    let mut sum = vec![0.0; q];
    let mut sq = vec![0.0; q];
    for _ in 0..n {
        let z = run_circuit(circuit, x, &[], noise, &mut rng).unwrap();
        for k in 0..q {
            sum[k] += z[k];
            sq[k] += z[k] * z[k];
        }
    }
    (0..q)
        .map(|k| {
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
            (mean, (var.max(0.0) / n as f64).sqrt())
        })
        .collect()
}

#[test]
fn end_of_circuit_depolarizing_matches_channel() {
    let (circuit, x) = two_qubit_circuit();
    let clean = run_circuit(&circuit, &x, &[], &NoiseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for p in [0.1, 0.5, 1.0] {
        let d = DepolarizingSpec { p, placement: DepolarizingPlacement::PerSegment };
        let exact = oracle(&circuit, &x, &[], d);
        for q in 0..2 {
            assert!((exact[q] - (1.0 - 4.0 * p / 3.0) * clean[q]).abs() < 1e-12, "oracle vs shrink factor");
        }
        let noise = NoiseSpec { gate_error: None, depolarizing: Some(d) };
        for (q, (mean, se)) in trajectory_stats(&circuit, &x, &noise, 10_000, 42).into_iter().enumerate() {
            assert!((mean - exact[q]).abs() <= 3.0 * se, "p={p} qubit {q}: {mean} vs {} (se {se})", exact[q]);
        }
    }
}

#[test]
fn per_gate_depolarizing_matches_channel() {
    let (circuit, x) = two_qubit_circuit();
    for p in [0.05, 0.3] {
        let d = DepolarizingSpec { p, placement: DepolarizingPlacement::PerGate };
        let exact = oracle(&circuit, &x, &[], d);
        let noise = NoiseSpec { gate_error: None, depolarizing: Some(d) };
        for (q, (mean, se)) in trajectory_stats(&circuit, &x, &noise, 10_000, 7).into_iter().enumerate() {
            assert!((mean - exact[q]).abs() <= 3.0 * se, "p={p} qubit {q}: {mean} vs {}", exact[q]);
        }
    }
}

#[test]
fn qidep_segment_noise_matches_channel() {
    let layout = plan_layout(8, 2, 1).unwrap();
    let circuit = build_circuit(&layout);
    assert_eq!(circuit.segments().len(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = pad_input(&(0..8).map(|_| rng.gen_range(-PI..PI)).collect::<Vec<_>>(), &layout).unwrap();
    let theta: Vec<f64> = (0..layout.pqc_param_count).map(|_| rng.gen_range(-PI..PI)).collect();
    let d = DepolarizingSpec { p: 0.2, placement: DepolarizingPlacement::PerSegment };
    let exact = oracle(&circuit, &x, &theta, d);
    let noise = NoiseSpec { gate_error: None, depolarizing: Some(d) };
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let n = 10_000;
    for _ in 0..n {
        let z = run_circuit(&circuit, &x, &theta, &noise, &mut rng).unwrap();
        for q in 0..2 {
            sum[q] += z[q];
            sq[q] += z[q] * z[q];
        }
    }
    for q in 0..2 {
        let mean = sum[q] / n as f64;
        let se = ((sq[q] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact[q]).abs() <= 3.0 * se, "qubit {q}: {mean} vs {}", exact[q]);
    }
}

/// E[cos(θ(1 + sδ))] with δ ~ U(0, 1) is (sin(θ(1+s)) − sin θ)/(θ s).
#[test]
fn gate_error_average_matches_integral() {
    let theta = 2.5;
    let scale = 0.3;
    let circuit = Circuit::new(1, 0, 1, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).unwrap();
    let noise = NoiseSpec { gate_error: Some(GateErrorSpec { scale }), depolarizing: None };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let zs: Vec<f64> = (0..n).map(|_| run_circuit(&circuit, &[], &[theta], &noise, &mut rng).unwrap()[0]).collect();
    let mean = zs.iter().sum::<f64>() / n as f64;
    let se = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    let exact = ((theta * (1.0 + scale)).sin() - theta.sin()) / (theta * scale);
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact}");
}

#[test]
fn noiseless_oracle_agrees_with_statevector() {
    let (circuit, x) = two_qubit_circuit();
    let exact = oracle(&circuit, &x, &[], DepolarizingSpec { p: 0.0, placement: DepolarizingPlacement::PerGate });
    let sv = run_circuit(&circuit, &x, &[], &NoiseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for q in 0..2 {
        assert!((exact[q] - sv[q]).abs() < 1e-12);
    }
}

#[test]
fn seeded_noise_is_reproducible() {
    let (circuit, x) = two_qubit_circuit();
    let noise = NoiseSpec {
        gate_error: Some(GateErrorSpec::default()),
        depolarizing: Some(DepolarizingSpec { p: 0.3, placement: DepolarizingPlacement::PerGate }),
    };
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| run_circuit(&circuit, &x, &[], &noise, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(init_state(0), Err(navq::NavqError::Config(_))));
    assert!(matches!(init_state(13), Err(navq::NavqError::Config(_))));
    let mut s = init_state(2).unwrap();
    assert!(matches!(apply_gate(&mut s, &Gate::rx(2, 0.1)), Err(navq::NavqError::Config(_))));
    assert!(matches!(apply_gate(&mut s, &Gate::Cz { control: 1, target: 1 }), Err(navq::NavqError::Config(_))));
    assert!(matches!(expectation_z(&s, 5), Err(navq::NavqError::Config(_))));
    let bad = NoiseSpec { gate_error: None, depolarizing: Some(DepolarizingSpec { p: 1.5, placement: DepolarizingPlacement::PerGate }) };
    assert!(matches!(bad.validate(), Err(navq::NavqError::Config(_))));
    let unused = Circuit::new(1, 0, 2, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(0))]).unwrap();
    assert!(matches!(unused.check_params_used(), Err(navq::NavqError::Layout(_))));
    let missing = Circuit::new(1, 0, 1, vec![GateOp::rotation(GateKind::Ry, 0, AngleSource::Param(3))]);
    assert!(matches!(missing, Err(navq::NavqError::Layout(_))));
}
