//! C ABI over the navq hybrid critic, QIDEP layout planner and driving
//! environment.
//!
//! Every fallible call returns a [`NavqStatus`]. On failure the message is
//! kept per thread and can be read with [`navq_last_error`]. Handles are
//! opaque pointers created by `*_new` and released with the matching
//! `*_free`; passing a freed or foreign pointer is undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use navq::agent::{GradientMode, HybridCritic};
use navq::analysis;
use navq::env::scenes::{scene_from_template, SceneGridConfig};
use navq::env::{generate_scenes, reset, EnvConfig, Observation, Outcome, SpeedAction, Split, WorldState};
use navq::qidep::plan_layout;
use navq::qsim::NoiseSpec;
use navq::rng::{substream, Stream, StreamRng};
use navq::NavqError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavqStatus {
    Ok = 0,
    Config = 1,
    Layout = 2,
    Input = 3,
    Usage = 4,
    Scene = 5,
    Planning = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Episode outcome reported by [`navq_env_step`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavqOutcome {
    Running = 0,
    Goal = 1,
    Collision = 2,
    Timeout = 3,
}

/// Gradient method for [`navq_critic_gradient`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavqGradientMode {
    Backprop = 0,
    ParameterShift = 1,
}

/// Hybrid quantum critic handle.
pub struct NavqCritic {
    critic: HybridCritic,
    rng: StreamRng,
}

/// Driving environment handle holding one running episode.
pub struct NavqEnv {
    state: WorldState,
    obs: Observation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(err: NavqError) -> NavqStatus {
    let status = match &err {
        NavqError::Config(_) => NavqStatus::Config,
        NavqError::Layout(_) => NavqStatus::Layout,
        NavqError::Input(_) => NavqStatus::Input,
        NavqError::Usage(_) => NavqStatus::Usage,
        NavqError::Scene(_) => NavqStatus::Scene,
        NavqError::Planning(_) => NavqStatus::Planning,
        NavqError::Io(_) => NavqStatus::Io,
    };
    set_error(err.to_string());
    status
}

fn null(what: &str) -> NavqStatus {
    set_error(format!("{what} is null"));
    NavqStatus::NullPointer
}

/// Runs `f`, turning panics into [`NavqStatus::Panic`].
fn guard(f: impl FnOnce() -> NavqStatus) -> NavqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            NavqStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if len == 0 {
        Some(&mut [])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> NavqStatus {
    if dst.len() < src.len() {
        set_error(format!("buffer holds {} values, {} needed", dst.len(), src.len()));
        return NavqStatus::BufferTooSmall;
    }
    dst[..src.len()].copy_from_slice(src);
    NavqStatus::Ok
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn navq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Total parameter count (circuit + readout) of an `n`-qubit, `layers`-layer
/// critic over a `p`-dimensional input.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_layout_param_count(p: usize, n_qubits: usize, layers: usize, out: *mut usize) -> NavqStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match plan_layout(p, n_qubits, layers) {
            Ok(l) => {
                *out = l.critic_param_count();
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of scenes in the default training (`test = 0`) or test grid.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_scene_count(test: bool, out: *mut usize) -> NavqStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let split = if test { Split::Test } else { Split::Train };
        match generate_scenes(&SceneGridConfig::default_for(split)) {
            Ok(s) => {
                *out = s.len();
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Trapezoid area under `curve` (at least two points).
///
/// # Safety
/// `curve` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_auc(curve: *const f64, len: usize, out: *mut f64) -> NavqStatus {
    guard(|| {
        let Some(c) = slice(curve, len) else { return null("curve") };
        if out.is_null() {
            return null("out");
        }
        match analysis::auc(c) {
            Ok(a) => {
                *out = a;
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Creates a noiseless hybrid critic with seeded random parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_new(p: usize, n_qubits: usize, layers: usize, seed: u64, out: *mut *mut NavqCritic) -> NavqStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let built = plan_layout(p, n_qubits, layers).and_then(|layout| {
            let mut init = substream(seed, Stream::Init);
            HybridCritic::new(layout, NoiseSpec::none(), false, &mut init)
        });
        match built {
            Ok(critic) => {
                *out = Box::into_raw(Box::new(NavqCritic { critic, rng: substream(seed, Stream::Noise) }));
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a critic. Null is ignored.
///
/// # Safety
/// `critic` must come from [`navq_critic_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_free(critic: *mut NavqCritic) {
    if !critic.is_null() {
        drop(Box::from_raw(critic));
    }
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `critic` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_param_count(critic: *const NavqCritic) -> usize {
    critic.as_ref().map_or(0, |c| c.critic.num_params())
}

/// Input dimension `p`, or 0 for a null handle.
///
/// # Safety
/// `critic` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_input_dim(critic: *const NavqCritic) -> usize {
    critic.as_ref().map_or(0, |c| c.critic.layout.p)
}

/// Copies the flat parameters (circuit angles, readout weights, bias).
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_get_params(critic: *const NavqCritic, buf: *mut f64, len: usize) -> NavqStatus {
    guard(|| {
        let Some(c) = critic.as_ref() else { return null("critic") };
        let Some(dst) = slice_mut(buf, len) else { return null("buf") };
        copy_out(c.critic.params(), dst)
    })
}

/// Overwrites the flat parameters. `len` must equal the parameter count.
///
/// # Safety
/// `params` must be valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_set_params(critic: *mut NavqCritic, params: *const f64, len: usize) -> NavqStatus {
    guard(|| {
        let Some(c) = critic.as_mut() else { return null("critic") };
        let Some(src) = slice(params, len) else { return null("params") };
        if src.len() != c.critic.num_params() {
            return fail(NavqError::Input(format!("expected {} parameters, got {}", c.critic.num_params(), src.len())));
        }
        if src.iter().any(|v| !v.is_finite()) {
            return fail(NavqError::Input("parameters must be finite".into()));
        }
        c.critic.params_mut().copy_from_slice(src);
        NavqStatus::Ok
    })
}

/// Critic value of input `h`.
///
/// # Safety
/// `h` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_value(critic: *mut NavqCritic, h: *const f64, len: usize, out: *mut f64) -> NavqStatus {
    guard(|| {
        let Some(c) = critic.as_mut() else { return null("critic") };
        let Some(x) = slice(h, len) else { return null("h") };
        if out.is_null() {
            return null("out");
        }
        match c.critic.value(x, &mut c.rng) {
            Ok(v) => {
                *out = v;
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Value and gradient with respect to every parameter. `grad` must hold at
/// least the parameter count.
///
/// # Safety
/// `h` must be valid for `len` reads, `grad` for `grad_len` writes and
/// `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_critic_gradient(
    critic: *mut NavqCritic,
    h: *const f64,
    len: usize,
    mode: NavqGradientMode,
    grad: *mut f64,
    grad_len: usize,
    value: *mut f64,
) -> NavqStatus {
    guard(|| {
        let Some(c) = critic.as_mut() else { return null("critic") };
        let Some(x) = slice(h, len) else { return null("h") };
        let Some(dst) = slice_mut(grad, grad_len) else { return null("grad") };
        if value.is_null() {
            return null("value");
        }
        let mode = match mode {
            NavqGradientMode::Backprop => GradientMode::BackpropSim,
            NavqGradientMode::ParameterShift => GradientMode::ParameterShift,
        };
        match c.critic.value_and_gradients(x, mode, &mut c.rng) {
            Ok((v, dp, _)) => {
                let s = copy_out(&dp, dst);
                if s == NavqStatus::Ok {
                    *value = v;
                }
                s
            }
            Err(e) => fail(e),
        }
    })
}

/// Starts an episode on one templated scene with the default environment.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navq_env_new(
    scenario_id: u8,
    ped_speed: f64,
    spawn_distance: f64,
    crossing_offset: f64,
    out: *mut *mut NavqEnv,
) -> NavqStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let cfg = Arc::new(EnvConfig::default());
        let started = scene_from_template(scenario_id, ped_speed, spawn_distance, crossing_offset).and_then(|s| reset(&s, &cfg));
        match started {
            Ok((state, obs)) => {
                *out = Box::into_raw(Box::new(NavqEnv { state, obs }));
                NavqStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from [`navq_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn navq_env_free(env: *mut NavqEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Length of the observation vector, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn navq_env_observation_dim(env: *const NavqEnv) -> usize {
    env.as_ref().map_or(0, |e| e.state.config.observation_dim())
}

/// Copies the current observation features.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn navq_env_observe(env: *const NavqEnv, buf: *mut f64, len: usize) -> NavqStatus {
    guard(|| {
        let Some(e) = env.as_ref() else { return null("env") };
        let Some(dst) = slice_mut(buf, len) else { return null("buf") };
        copy_out(&e.obs.features(), dst)
    })
}

/// Advances one step. `action` is 0 accelerate, 1 maintain, 2 decelerate;
/// steering follows the planned path. `reward` and `outcome` may be null.
///
/// # Safety
/// `reward` and `outcome` must be null or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn navq_env_step(env: *mut NavqEnv, action: u32, reward: *mut f64, outcome: *mut NavqOutcome) -> NavqStatus {
    guard(|| {
        let Some(e) = env.as_mut() else { return null("env") };
        let Some(acc) = SpeedAction::from_index(action as usize) else {
            return fail(NavqError::Input(format!("action index {action} is not in 0..3")));
        };
        match e.state.step_speed(acc) {
            Ok((obs, r, _, _)) => {
                e.obs = obs;
                if !reward.is_null() {
                    *reward = r.total;
                }
                if !outcome.is_null() {
                    *outcome = match e.state.outcome {
                        None => NavqOutcome::Running,
                        Some(Outcome::Goal) => NavqOutcome::Goal,
                        Some(Outcome::Collision) => NavqOutcome::Collision,
                        Some(Outcome::Timeout) => NavqOutcome::Timeout,
                    };
                }
                NavqStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}
