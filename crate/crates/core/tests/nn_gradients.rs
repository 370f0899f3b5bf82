//! Analytic backward passes against central finite differences on random
//! shapes. Each check uses a random linear-plus-quadratic readout so every
//! output entry carries a distinct upstream gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use navq::nn::*;

const SHAPES: u64 = 50;
const TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn vec_in(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// `L(y) = Σ a_i y_i + ½ Σ y_i²` and its gradient.
struct Readout(Vec<f64>);

impl Readout {
    fn loss(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.0).map(|(y, a)| a * y + 0.5 * y * y).sum()
    }
    fn grad(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.0).map(|(y, a)| a + y).collect()
    }
}

fn fd_input(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    finite_diff_check(f, x, analytic, STEP).unwrap()
}

#[test]
fn dense_backward_matches_fd() {
    for seed in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, o) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let layer = Dense::new(i, o, &mut rng);
        let x = vec_in(&mut rng, i, 2.0);
        let r = Readout(vec_in(&mut rng, o, 1.0));
        let y = layer.forward(&x).unwrap();
        let mut g = vec![0.0; layer.num_params()];
        let dx = layer.backward(&x, &r.grad(&y), &mut g);

        let wp = |p: &[f64]| {
            let mut l = layer.clone();
            l.params_mut().copy_from_slice(p);
            r.loss(&l.forward(&x).unwrap())
        };
        let e_p = finite_diff_check(wp, layer.params(), &g, STEP).unwrap();
        let e_x = fd_input(|x| r.loss(&layer.forward(x).unwrap()), &x, &dx);
        assert!(e_p < TOL && e_x < TOL, "shape {i}x{o}: params {e_p}, input {e_x}");
    }
}

#[test]
fn layer_norm_backward_matches_fd() {
    for seed in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let d = rng.gen_range(2..16);
        let mut norm = LayerNorm::new(d);
        let p = vec_in(&mut rng, 2 * d, 1.5);
        norm.params_mut().copy_from_slice(&p);
        let x = vec_in(&mut rng, d, 3.0);
        let r = Readout(vec_in(&mut rng, d, 1.0));
        let (y, cache) = norm.forward(&x).unwrap();
        let mut g = vec![0.0; norm.num_params()];
        let dx = norm.backward(&cache, &r.grad(&y), &mut g);

        let wp = |p: &[f64]| {
            let mut l = norm.clone();
            l.params_mut().copy_from_slice(p);
            r.loss(&l.forward(&x).unwrap().0)
        };
        let e_p = finite_diff_check(wp, norm.params(), &g, STEP).unwrap();
        let e_x = fd_input(|x| r.loss(&norm.forward(x).unwrap().0), &x, &dx);
        assert!(e_p < TOL && e_x < TOL, "dim {d}: params {e_p}, input {e_x}");
        // the stateless form is the same map
        let (gain, bias) = p.split_at(d);
        assert_eq!(layer_norm(&x, gain, bias).unwrap(), y);
    }
}

/// Unrolls `xs` through the cell and scores every hidden state plus the final
/// cell state.
fn lstm_loss(cell: &LstmCell, xs: &[Vec<f64>], h0: &[f64], c0: &[f64], rh: &[Readout], rc: &Readout) -> f64 {
    let (mut h, mut c) = (h0.to_vec(), c0.to_vec());
    let mut total = 0.0;
    for (x, r) in xs.iter().zip(rh) {
        let (nh, nc) = cell.step(x, &h, &c).unwrap();
        total += r.loss(&nh);
        h = nh;
        c = nc;
    }
    total + rc.loss(&c)
}

#[test]
fn lstm_bptt_matches_fd() {
    for seed in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (i, hd, t) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..5));
        let cell = LstmCell::new(i, hd, &mut rng);
        let xs: Vec<Vec<f64>> = (0..t).map(|_| vec_in(&mut rng, i, 1.5)).collect();
        let h0 = vec_in(&mut rng, hd, 0.8);
        let c0 = vec_in(&mut rng, hd, 0.8);
        let rh: Vec<Readout> = (0..t).map(|_| Readout(vec_in(&mut rng, hd, 1.0))).collect();
        let rc = Readout(vec_in(&mut rng, hd, 1.0));

        let (mut h, mut c) = (h0.clone(), c0.clone());
        let mut caches = Vec::new();
        let mut hs = Vec::new();
        for x in &xs {
            let (nh, nc, cache) = cell.step_cached(x, &h, &c).unwrap();
            caches.push(cache);
            hs.push(nh.clone());
            h = nh;
            c = nc;
        }
        let mut g = vec![0.0; cell.num_params()];
        let mut dh_next = vec![0.0; hd];
        let mut dc = rc.grad(&c);
        let mut dxs = vec![Vec::new(); t];
        for k in (0..t).rev() {
            let dh: Vec<f64> = rh[k].grad(&hs[k]).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = cell.backward_step(&caches[k], &dh, &dc, &mut g);
            dxs[k] = dx;
            dh_next = dh_prev;
            dc = dc_prev;
        }

        let wp = |p: &[f64]| {
            let mut l = cell.clone();
            l.params_mut().copy_from_slice(p);
            lstm_loss(&l, &xs, &h0, &c0, &rh, &rc)
        };
        let e_p = finite_diff_check(wp, cell.params(), &g, STEP).unwrap();
        let e_h = fd_input(|h| lstm_loss(&cell, &xs, h, &c0, &rh, &rc), &h0, &dh_next);
        let e_c = fd_input(|c| lstm_loss(&cell, &xs, &h0, c, &rh, &rc), &c0, &dc);
        let e_x = fd_input(
            |x| {
                let mut xs2 = xs.clone();
                xs2[0] = x.to_vec();
                lstm_loss(&cell, &xs2, &h0, &c0, &rh, &rc)
            },
            &xs[0],
            &dxs[0],
        );
        assert!(
            e_p < TOL && e_h < TOL && e_c < TOL && e_x < TOL,
            "in {i} hidden {hd} steps {t}: params {e_p} h0 {e_h} c0 {e_c} x0 {e_x}"
        );
    }
}

/// Gradients of `A·log π(a) + β·H` with respect to the logits, which is
/// what the actor head backpropagates.
#[test]
fn softmax_log_prob_and_entropy_gradients_match_fd() {
    for seed in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let k = rng.gen_range(2..7);
        let logits = vec_in(&mut rng, k, 4.0);
        let a = rng.gen_range(0..k);
        let adv = rng.gen_range(-3.0..3.0);
        let beta = rng.gen_range(0.0..0.5);
        let objective = |z: &[f64]| adv * log_softmax_at(z, a) + beta * softmax_entropy(z).1;
        let (p, h) = softmax_entropy(&logits);
        let analytic: Vec<f64> = (0..k)
            .map(|j| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                adv * (onehot - p[j]) - beta * p[j] * (p[j].ln() + h)
            })
            .collect();
        let e = fd_input(objective, &logits, &analytic);
        assert!(e < TOL, "{k} logits: {e}");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((0.0..=(k as f64).ln() + 1e-12).contains(&h));
        assert!((log_softmax_at(&logits, a) - p[a].ln()).abs() < 1e-12);
    }
}

#[test]
fn tanh_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..SHAPES {
        let n = rng.gen_range(1..10);
        let x = vec_in(&mut rng, n, 3.0);
        let r = Readout(vec_in(&mut rng, n, 1.0));
        let y = tanh_vec(&x);
        let dx = tanh_backward(&y, &r.grad(&y));
        assert!(fd_input(|x| r.loss(&tanh_vec(x)), &x, &dx) < TOL);
    }
}

#[test]
fn shape_mismatches_are_config_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = Dense::new(3, 2, &mut rng);
    assert!(matches!(d.forward(&[1.0, 2.0]), Err(navq::NavqError::Config(_))));
    assert!(matches!(LayerNorm::new(4).forward(&[1.0]), Err(navq::NavqError::Config(_))));
    let cell = LstmCell::new(2, 3, &mut rng);
    assert!(matches!(cell.step(&[1.0, 2.0], &[0.0; 2], &[0.0; 3]), Err(navq::NavqError::Config(_))));
}

#[test]
fn adam_moves_against_the_gradient() {
    let mut state = AdamState::new(3, AdamConfig { lr: 0.1, ..AdamConfig::default() });
    let mut p = vec![1.0, -1.0, 0.5];
    state.update(&mut p, &[2.0, -3.0, 0.0]).unwrap();
    // first bias-corrected Adam step has magnitude lr for nonzero gradients
    assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6 && p[2] == 0.5);
    assert_eq!(state.steps(), 1);
}
