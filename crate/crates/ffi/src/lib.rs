//! C ABI over the `cvpo` crate.
//!
//! Every function returns a [`CvpoStatus`]. On failure the message is kept in
//! a thread-local slot readable with [`cvpo_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cvpo::estep::{solve_dual, variational_weights, DualOptions, DualStatus, ParticleSet};
use cvpo::harness::{TrainConfig, Trainer};
use cvpo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    InsufficientData = 4,
    Infeasible = 5,
    Numerical = 6,
    Config = 7,
    Io = 8,
    Other = 9,
    Panic = 10,
}

/// Opaque training session.
pub struct CvpoTrainer {
    inner: Trainer,
}

/// Summary of one training epoch.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvpoEpoch {
    pub epoch: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub ep_reward_mean: f64,
    pub ep_cost_mean: f64,
    pub cumulative_cost: f64,
    pub eta: f64,
    pub lambda: f64,
    pub slater_ok: u8,
}

/// Result of the E-step dual solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvpoDual {
    pub eta: f64,
    pub lambda: f64,
    pub value: f64,
    /// 0 optimal, 1 lambda on its lower bound, 2 infeasible, 3 iteration limit.
    pub status: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CvpoStatus {
    match e {
        Error::Dimension { .. } => CvpoStatus::Dimension,
        Error::InsufficientData { .. } => CvpoStatus::InsufficientData,
        Error::InvalidArgument(_) => CvpoStatus::InvalidArgument,
        Error::Infeasible(_) => CvpoStatus::Infeasible,
        Error::Numerical(_) => CvpoStatus::Numerical,
        Error::Config(_) => CvpoStatus::Config,
        Error::Io(_) => CvpoStatus::Io,
        _ => CvpoStatus::Other,
    }
}

fn guard<F: FnOnce() -> Result<(), CvpoStatus>>(f: F) -> CvpoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvpoStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CvpoStatus::Panic
        }
    }
}

fn lift<T>(r: cvpo::Result<T>) -> Result<T, CvpoStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> CvpoStatus {
    set_error("null pointer argument".into());
    CvpoStatus::NullPointer
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cvpo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a trainer from `key = value` config text (NUL terminated).
///
/// # Safety
/// `config` must be NULL or a valid C string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cvpo_trainer_new(config: *const c_char, out: *mut *mut CvpoTrainer) -> CvpoStatus {
    if config.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let text = CStr::from_ptr(config).to_str().map_err(|e| {
            set_error(format!("config is not UTF-8: {e}"));
            CvpoStatus::InvalidArgument
        })?;
        let mut cfg = TrainConfig::default();
        lift(cfg.apply_text(text))?;
        lift(cfg.validate())?;
        let inner = lift(Trainer::new(cfg))?;
        *out = Box::into_raw(Box::new(CvpoTrainer { inner }));
        Ok(())
    })
}

/// Runs one epoch and writes its summary to `out`.
///
/// # Safety
/// `t` must come from [`cvpo_trainer_new`]; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cvpo_trainer_run_epoch(t: *mut CvpoTrainer, out: *mut CvpoEpoch) -> CvpoStatus {
    if t.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let m = lift((*t).inner.run_epoch())?;
        *out = CvpoEpoch {
            epoch: m.epoch as u64,
            env_steps: m.env_steps as u64,
            episodes: m.episodes as u64,
            ep_reward_mean: m.ep_reward_mean,
            ep_cost_mean: m.ep_cost_mean,
            cumulative_cost: m.cumulative_cost,
            eta: m.eta,
            lambda: m.lambda,
            slater_ok: m.slater_ok,
        };
        Ok(())
    })
}

/// # Safety
/// `t` must be NULL or come from [`cvpo_trainer_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn cvpo_trainer_free(t: *mut CvpoTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Solves the E-step dual for `n_states x k` critic values (row-major) with a
/// uniform base policy, and writes the `n_states x k` weights to `weights`.
///
/// # Safety
/// `qr`, `qc` and `weights` must point to `n_states * k` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn cvpo_estep_solve(
    n_states: usize,
    k: usize,
    qr: *const f64,
    qc: *const f64,
    eps1: f64,
    eps2: f64,
    weights: *mut f64,
    out: *mut CvpoDual,
) -> CvpoStatus {
    if qr.is_null() || qc.is_null() || weights.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let n = n_states.checked_mul(k).ok_or_else(|| {
            set_error("n_states * k overflows".into());
            CvpoStatus::InvalidArgument
        })?;
        let qr = std::slice::from_raw_parts(qr, n).to_vec();
        let qc = std::slice::from_raw_parts(qc, n).to_vec();
        let ps = lift(ParticleSet::from_values(n_states, k, qr, qc))?;
        let sol = lift(solve_dual(&ps, eps1, eps2, &DualOptions::default()))?;
        let w = lift(variational_weights(&ps, &sol))?;
        std::slice::from_raw_parts_mut(weights, n).copy_from_slice(&w.w);
        *out = CvpoDual {
            eta: sol.eta,
            lambda: sol.lam,
            value: sol.value,
            status: match sol.status {
                DualStatus::Optimal => 0,
                DualStatus::BoundaryLambdaZero => 1,
                DualStatus::InfeasibleDetected => 2,
                DualStatus::MaxIter => 3,
            },
        };
        Ok(())
    })
}

/// Converts an episodic cost limit over `horizon` steps to a discounted one.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cvpo_convert_threshold(episodic: f64, horizon: usize, gamma: f64, out: *mut f64) -> CvpoStatus {
    if out.is_null() {
        return null();
    }
    guard(|| {
        *out = lift(cvpo::cmdp::convert_threshold(episodic, horizon, gamma))?;
        Ok(())
    })
}

/// Lambert W on branch 0 or -1.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cvpo_lambert_w(branch: i32, x: f64, out: *mut f64) -> CvpoStatus {
    if out.is_null() {
        return null();
    }
    guard(|| {
        *out = lift(cvpo::diagnostics::lambert_w(branch, x))?;
        Ok(())
    })
}
