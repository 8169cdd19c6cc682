//! C ABI for the camopd training engine.
//!
//! Conventions:
//! - Every fallible function returns a [`CamopdStatus`]; results come back
//!   through out-pointers.
//! - Handles are opaque. Allocate with `*_new`, release with `*_free`; every
//!   `*_free` tolerates NULL.
//! - After any non-OK status, [`camopd_last_error`] returns a NUL-terminated
//!   UTF-8 message that stays valid until the next failing call on the same
//!   thread.
//! - Strings passed in must be NUL-terminated UTF-8.
//!
//! The committed header lives at `include/camopd.h` (generated with cbindgen;
//! see the crate README for the regeneration command).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use camopd::config::{Mode, RunConfig};
use camopd::runner::{self, RunSummary};
use camopd::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamopdStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8 or named an unknown key.
    InvalidArgument = 2,
    /// The configuration failed validation or could not be parsed.
    InvalidConfig = 3,
    /// Training, I/O, or another runtime failure; see `camopd_last_error`.
    RuntimeFailure = 4,
    /// An internal panic was caught at the boundary.
    InternalPanic = 5,
}

/// Opaque configuration handle (builder over the engine's run config).
pub struct CamopdConfig {
    inner: RunConfig,
}

/// Opaque handle to a finished run's summary.
pub struct CamopdRun {
    summary: RunSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: CamopdStatus, message: &str) -> CamopdStatus {
    set_last_error(message);
    status
}

fn fail_with(err: &Error) -> CamopdStatus {
    let status = match err {
        Error::Validation(_) | Error::ConfigParse(_) => CamopdStatus::InvalidConfig,
        _ => CamopdStatus::RuntimeFailure,
    };
    fail(status, &err.to_string())
}

/// Run `body` with panics converted to `InternalPanic`.
fn guarded(body: impl FnOnce() -> CamopdStatus) -> CamopdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            fail(CamopdStatus::InternalPanic, &message)
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, CamopdStatus> {
    if ptr.is_null() {
        return Err(fail(CamopdStatus::NullArgument, "string argument is NULL"));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            CamopdStatus::InvalidArgument,
            "string argument is not valid UTF-8",
        )
    })
}

/// Version of the library, as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn camopd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread (empty if none).
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn camopd_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// New configuration handle with default settings. Never NULL.
#[no_mangle]
pub extern "C" fn camopd_config_new() -> *mut CamopdConfig {
    Box::into_raw(Box::new(CamopdConfig {
        inner: RunConfig::default(),
    }))
}

/// Release a configuration handle. NULL is a no-op.
///
/// # Safety
/// `cfg` must be NULL or a pointer from `camopd_config_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn camopd_config_free(cfg: *mut CamopdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set an integer-valued field. Keys: seed, steps, n_g, eval_interval,
/// spec_max_steps, reuse_epochs, batch_size, t_roll, n_eval, vocab, order.
///
/// # Safety
/// `cfg` must be a live handle; `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn camopd_config_set_u64(
    cfg: *mut CamopdConfig,
    key: *const c_char,
    value: u64,
) -> CamopdStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CamopdStatus::NullArgument, "config handle is NULL");
        };
        let key = match read_str(key) {
            Ok(k) => k,
            Err(status) => return status,
        };
        let c = &mut cfg.inner;
        match key {
            "seed" => c.seed = value,
            "steps" => c.steps = value,
            "n_g" => c.n_g = value,
            "eval_interval" => c.eval_interval = value,
            "spec_max_steps" => c.spec_max_steps = value,
            "reuse_epochs" => c.reuse_epochs = value,
            "batch_size" => c.batch_size = value as usize,
            "t_roll" => c.t_roll = value as usize,
            "n_eval" => c.n_eval = value as usize,
            "vocab" => c.vocab = value as usize,
            "order" => c.order = value as usize,
            other => {
                return fail(
                    CamopdStatus::InvalidArgument,
                    &format!("unknown integer config key {other:?}"),
                )
            }
        }
        CamopdStatus::Ok
    })
}

/// Set a float-valued field. Keys: rho_g, rho_d, r_g, r_d, coverage, eta,
/// kappa, mix_ratio.
///
/// # Safety
/// `cfg` must be a live handle; `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn camopd_config_set_f64(
    cfg: *mut CamopdConfig,
    key: *const c_char,
    value: f64,
) -> CamopdStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CamopdStatus::NullArgument, "config handle is NULL");
        };
        let key = match read_str(key) {
            Ok(k) => k,
            Err(status) => return status,
        };
        let c = &mut cfg.inner;
        match key {
            "rho_g" => c.rho_g = value,
            "rho_d" => c.rho_d = value,
            "r_g" => c.r_g = value,
            "r_d" => c.r_d = value,
            "coverage" => c.coverage = value,
            "eta" => c.eta = value,
            "kappa" => c.kappa = value,
            "mix_ratio" => c.mix_ratio = value,
            other => {
                return fail(
                    CamopdStatus::InvalidArgument,
                    &format!("unknown float config key {other:?}"),
                )
            }
        }
        CamopdStatus::Ok
    })
}

/// Set the training mode: "vanilla", "camopd", or "decoupled-only".
///
/// # Safety
/// `cfg` must be a live handle; `mode` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn camopd_config_set_mode(
    cfg: *mut CamopdConfig,
    mode: *const c_char,
) -> CamopdStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CamopdStatus::NullArgument, "config handle is NULL");
        };
        let mode = match read_str(mode) {
            Ok(m) => m,
            Err(status) => return status,
        };
        match Mode::from_str(mode) {
            Ok(m) => {
                cfg.inner.mode = m;
                CamopdStatus::Ok
            }
            Err(e) => fail(CamopdStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Validate the configuration without running anything.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn camopd_config_validate(cfg: *const CamopdConfig) -> CamopdStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(CamopdStatus::NullArgument, "config handle is NULL");
        };
        match cfg.inner.validate() {
            Ok(()) => CamopdStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Execute one full run (scenario build, specialization, training) into
/// `out_dir`, writing the usual artifact set. On success `*out` owns the run
/// summary; release it with `camopd_run_free`.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` a NUL-terminated path, `out` a
/// valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn camopd_run(
    cfg: *const CamopdConfig,
    out_dir: *const c_char,
    force: bool,
    out: *mut *mut CamopdRun,
) -> CamopdStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(CamopdStatus::NullArgument, "config handle is NULL");
        };
        if out.is_null() {
            return fail(CamopdStatus::NullArgument, "out pointer is NULL");
        }
        let dir = match read_str(out_dir) {
            Ok(d) => d,
            Err(status) => return status,
        };
        match runner::cmd_run(&cfg.inner, Path::new(dir), force) {
            Ok(summary) => {
                *out = Box::into_raw(Box::new(CamopdRun { summary }));
                CamopdStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Release a run handle. NULL is a no-op.
///
/// # Safety
/// `run` must be NULL or a pointer from `camopd_run` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_free(run: *mut CamopdRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

unsafe fn run_scalar<T>(
    run: *const CamopdRun,
    out: *mut T,
    get: impl Fn(&RunSummary) -> T,
) -> CamopdStatus {
    let Some(run) = run.as_ref() else {
        return fail(CamopdStatus::NullArgument, "run handle is NULL");
    };
    if out.is_null() {
        return fail(CamopdStatus::NullArgument, "out pointer is NULL");
    }
    *out = get(&run.summary);
    CamopdStatus::Ok
}

/// Final evaluation KL against the general teacher, in nats.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_final_kl_general(
    run: *const CamopdRun,
    out: *mut f64,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.report.final_kl_general))
}

/// Final evaluation KL against the domain teacher, in nats.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_final_kl_domain(
    run: *const CamopdRun,
    out: *mut f64,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.report.final_kl_domain))
}

/// Best (lowest) general-teacher evaluation KL seen during training.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_best_kl_general(
    run: *const CamopdRun,
    out: *mut f64,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.report.best_kl_general))
}

/// Total rollouts consumed by training updates.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_consumed_rollouts(
    run: *const CamopdRun,
    out: *mut u64,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.report.consumed_rollouts))
}

/// Optimizer steps taken by the specialization pre-phase.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_specialize_steps(
    run: *const CamopdRun,
    out: *mut u64,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.specialize.steps))
}

/// Scenario attempt index that produced a specializable world (0-based).
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn camopd_run_scenario_attempt(
    run: *const CamopdRun,
    out: *mut u32,
) -> CamopdStatus {
    guarded(|| run_scalar(run, out, |s| s.scenario_attempt))
}
