use std::ffi::CStr;
use std::ptr;

use navq_ffi::*;

fn last_error() -> String {
    let p = navq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn layout_counts_match_table() {
    let expected = [(4, 1, 29), (4, 2, 53), (4, 3, 77), (6, 1, 31), (6, 2, 55), (6, 3, 79)];
    for (n, l, total) in expected {
        let mut out = 0usize;
        assert_eq!(unsafe { navq_layout_param_count(32, n, l, &mut out) }, NavqStatus::Ok);
        assert_eq!(out, total, "n={n} L={l}");
    }
}

#[test]
fn layout_rejects_zero_qubits() {
    let mut out = 0usize;
    assert_eq!(unsafe { navq_layout_param_count(32, 0, 1, &mut out) }, NavqStatus::Config);
    assert!(last_error().contains("QIDEP"));
}

#[test]
fn null_out_pointer_is_reported() {
    assert_eq!(unsafe { navq_layout_param_count(32, 4, 2, ptr::null_mut()) }, NavqStatus::NullPointer);
    assert_eq!(unsafe { navq_critic_param_count(ptr::null()) }, 0);
}

#[test]
fn train_grid_has_3690_scenes() {
    let mut out = 0usize;
    assert_eq!(unsafe { navq_scene_count(false, &mut out) }, NavqStatus::Ok);
    assert_eq!(out, 3690);
}

#[test]
fn auc_of_line() {
    let curve = [0.0, 1.0, 2.0, 3.0];
    let mut out = 0.0;
    assert_eq!(unsafe { navq_auc(curve.as_ptr(), curve.len(), &mut out) }, NavqStatus::Ok);
    assert!((out - 4.5).abs() < 1e-12);
    assert_eq!(unsafe { navq_auc(curve.as_ptr(), 1, &mut out) }, NavqStatus::Usage);
}

struct Critic(*mut NavqCritic);
impl Drop for Critic {
    fn drop(&mut self) {
        unsafe { navq_critic_free(self.0) }
    }
}

fn critic(seed: u64) -> Critic {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { navq_critic_new(32, 4, 2, seed, &mut h) }, NavqStatus::Ok);
    Critic(h)
}

#[test]
fn critic_round_trip_and_readout() {
    let c = critic(3);
    let d = unsafe { navq_critic_param_count(c.0) };
    assert_eq!(d, 53);
    assert_eq!(unsafe { navq_critic_input_dim(c.0) }, 32);

    let mut params = vec![0.0; d];
    assert_eq!(unsafe { navq_critic_get_params(c.0, params.as_mut_ptr(), d) }, NavqStatus::Ok);
    let mut short = vec![0.0; d - 1];
    assert_eq!(unsafe { navq_critic_get_params(c.0, short.as_mut_ptr(), d - 1) }, NavqStatus::BufferTooSmall);

    // zero angles, unit weights, zero bias: every <Z> is +1 on a zero input
    let mut p = vec![0.0; d];
    for w in &mut p[48..52] {
        *w = 1.0;
    }
    assert_eq!(unsafe { navq_critic_set_params(c.0, p.as_ptr(), d) }, NavqStatus::Ok);
    let h = [0.0; 32];
    let mut v = 0.0;
    assert_eq!(unsafe { navq_critic_value(c.0, h.as_ptr(), 32, &mut v) }, NavqStatus::Ok);
    assert!((v - 4.0).abs() < 1e-12);

    assert_eq!(unsafe { navq_critic_set_params(c.0, p.as_ptr(), d - 1) }, NavqStatus::Input);
    assert_eq!(unsafe { navq_critic_value(c.0, h.as_ptr(), 31, &mut v) }, NavqStatus::Config);
}

#[test]
fn critic_gradient_modes_agree() {
    let c = critic(11);
    let d = unsafe { navq_critic_param_count(c.0) };
    let h: Vec<f64> = (0..32).map(|i| ((i as f64) * 0.37).sin()).collect();
    let mut g_bp = vec![0.0; d];
    let mut g_ps = vec![0.0; d];
    let (mut v_bp, mut v_ps) = (0.0, 0.0);
    unsafe {
        assert_eq!(navq_critic_gradient(c.0, h.as_ptr(), 32, NavqGradientMode::Backprop, g_bp.as_mut_ptr(), d, &mut v_bp), NavqStatus::Ok);
        assert_eq!(navq_critic_gradient(c.0, h.as_ptr(), 32, NavqGradientMode::ParameterShift, g_ps.as_mut_ptr(), d, &mut v_ps), NavqStatus::Ok);
    }
    assert!((v_bp - v_ps).abs() < 1e-12);
    for (a, b) in g_bp.iter().zip(&g_ps) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert_eq!(g_bp[d - 1], 1.0);
}

#[test]
fn env_runs_to_termination() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { navq_env_new(1, 1.2, 10.0, 10.0, &mut e) }, NavqStatus::Ok);
    let dim = unsafe { navq_env_observation_dim(e) };
    assert_eq!(dim, 28);
    let mut obs = vec![0.0; dim];
    assert_eq!(unsafe { navq_env_observe(e, obs.as_mut_ptr(), dim) }, NavqStatus::Ok);
    assert!(obs.iter().all(|v| v.is_finite()));

    assert_eq!(unsafe { navq_env_step(e, 7, ptr::null_mut(), ptr::null_mut()) }, NavqStatus::Input);

    let mut outcome = NavqOutcome::Running;
    let mut steps = 0;
    while outcome == NavqOutcome::Running {
        let mut r = 0.0;
        assert_eq!(unsafe { navq_env_step(e, 0, &mut r, &mut outcome) }, NavqStatus::Ok);
        assert!(r.is_finite());
        steps += 1;
        assert!(steps <= 500);
    }
    assert_eq!(unsafe { navq_env_step(e, 1, ptr::null_mut(), ptr::null_mut()) }, NavqStatus::Usage);
    unsafe { navq_env_free(e) };
}

#[test]
fn env_rejects_unknown_scenario() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { navq_env_new(9, 1.0, 0.0, 10.0, &mut e) }, NavqStatus::Config);
    assert!(e.is_null());
    assert!(last_error().contains("scenario"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/navq.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile_dir();
    let main = dir.join("main.c");
    std::fs::write(&main, "#include \"navq.h\"\nint main(void) { size_t n; return navq_layout_param_count(32, 4, 2, &n) == NAVQ_STATUS_OK ? 0 : 1; }\n").unwrap();
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&main)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("navq-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
