//! C ABI for the stochastic Volterra control toolkit.
//!
//! Conventions:
//! * handles (`VcGrid`, `VcModel`) are opaque; create with `vc_*_new` /
//!   `vc_model_from_json`, release with the matching `vc_*_free`;
//! * every fallible call returns a [`VcStatus`]; on any non-OK status the
//!   thread-local message from [`vc_last_error_message`] describes the
//!   failure;
//! * output buffers are caller-allocated; length arguments are checked and
//!   mismatches fail with `VC_STATUS_BUFFER_MISMATCH`.
//!
//! The generated header lives at `include/volterra_control.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use volterra_control::consumption::{model_kappa, optimal_control, ConsumptionModel};
use volterra_control::driver::{sample_driver, TimeGrid};
use volterra_control::forward::{performance, ControlPath, InfoMode};
use volterra_control::runner::{run, RunOptions};
use volterra_control::stats::{mean_se, par_map_paths};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    VcStatusOk = 0,
    VcStatusNullPointer = 1,
    VcStatusUtf8 = 2,
    VcStatusInvalidArgument = 3,
    VcStatusNumeric = 4,
    VcStatusBufferMismatch = 5,
    VcStatusPanic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: VcStatus, message: &str) -> VcStatus {
    set_error(message);
    status
}

fn from_error(err: volterra_control::Error) -> VcStatus {
    use volterra_control::Error::*;
    let status = match &err {
        InvalidArgument(_) | Config { .. } => VcStatus::VcStatusInvalidArgument,
        _ => VcStatus::VcStatusNumeric,
    };
    fail(status, &err.to_string())
}

fn guarded(f: impl FnOnce() -> VcStatus) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(VcStatus::VcStatusPanic, "internal panic"),
    }
}

/// Opaque time-grid handle.
pub struct VcGrid {
    inner: TimeGrid,
}

/// Opaque model handle (cash-flow model plus its Lévy specification).
pub struct VcModel {
    inner: ConsumptionModel,
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a uniform grid over `[0, horizon]` with `steps` intervals.
///
/// # Safety
/// `out` must be a valid pointer to a `VcGrid*` slot.
#[no_mangle]
pub unsafe extern "C" fn vc_grid_new(
    horizon: f64,
    steps: usize,
    out: *mut *mut VcGrid,
) -> VcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(VcStatus::VcStatusNullPointer, "out is null");
        }
        match TimeGrid::make(horizon, steps) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(VcGrid { inner })) };
                VcStatus::VcStatusOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Release a grid handle. Passing null is a no-op.
///
/// # Safety
/// `grid` must be null or a pointer returned by [`vc_grid_new`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn vc_grid_free(grid: *mut VcGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Number of nodes (`steps + 1`) of a grid.
///
/// # Safety
/// `grid` must be a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn vc_grid_len(grid: *const VcGrid) -> usize {
    if grid.is_null() {
        return 0;
    }
    unsafe { &*grid }.inner.steps() + 1
}

/// Build a model from its JSON description (the `model` object schema of the
/// CLI with `horizon` and `levy` inlined):
///
/// ```json
/// {"x0": 2.0, "b0": {"id": "constant", "value": 0.5},
///  "sigma0": {"id": "zero"}, "gamma0": {"id": "zero"},
///  "theta": {"id": "constant", "value": 1.0},
///  "horizon": 1.0, "levy": {"intensity": 0.0, "marks": []},
///  "epsilon": 0.1}
/// ```
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid slot pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_model_from_json(
    json: *const c_char,
    out: *mut *mut VcModel,
) -> VcStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            return fail(VcStatus::VcStatusNullPointer, "json or out is null");
        }
        let raw = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(raw) => raw,
            Err(_) => return fail(VcStatus::VcStatusUtf8, "json is not valid UTF-8"),
        };
        let model: ConsumptionModel = match serde_json::from_str(raw) {
            Ok(m) => m,
            Err(e) => return fail(VcStatus::VcStatusInvalidArgument, &format!("json: {e}")),
        };
        if let Err(e) = model.validate() {
            return from_error(e);
        }
        unsafe { *out = Box::into_raw(Box::new(VcModel { inner: model })) };
        VcStatus::VcStatusOk
    })
}

/// Release a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn vc_model_free(model: *mut VcModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], VcStatus> {
    if ptr.is_null() {
        set_error("output buffer is null");
        return Err(VcStatus::VcStatusNullPointer);
    }
    if len != needed {
        set_error(&format!("buffer holds {len} values, need {needed}"));
        return Err(VcStatus::VcStatusBufferMismatch);
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
}

/// Closed-form optimal consumption rate (trivial-information mode) at the
/// grid nodes. `out` must hold `vc_grid_len(grid)` values.
///
/// # Safety
/// `model` and `grid` must be live handles; `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_optimal_control(
    model: *const VcModel,
    grid: *const VcGrid,
    tol: f64,
    u_min: f64,
    u_max: f64,
    out: *mut f64,
    len: usize,
) -> VcStatus {
    guarded(|| {
        if model.is_null() || grid.is_null() {
            return fail(VcStatus::VcStatusNullPointer, "model or grid is null");
        }
        let (model, grid) = unsafe { (&(*model).inner, &(*grid).inner) };
        let needed = grid.steps() + 1;
        let out = match unsafe { slice_out(out, len, needed) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let control = match optimal_control(model, InfoMode::Deterministic, grid, tol, (u_min, u_max)) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        let driver = sample_driver(grid, &model.levy, 1, 0);
        match control.realize(needed, &driver) {
            Ok(values) => {
                out.copy_from_slice(&values);
                VcStatus::VcStatusOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Resolvent factor `kappa(t_i)` of the model kernel at the grid nodes.
///
/// # Safety
/// Same contracts as [`vc_optimal_control`].
#[no_mangle]
pub unsafe extern "C" fn vc_resolvent_kappa(
    model: *const VcModel,
    grid: *const VcGrid,
    tol: f64,
    out: *mut f64,
    len: usize,
) -> VcStatus {
    guarded(|| {
        if model.is_null() || grid.is_null() {
            return fail(VcStatus::VcStatusNullPointer, "model or grid is null");
        }
        let (model, grid) = unsafe { (&(*model).inner, &(*grid).inner) };
        let out = match unsafe { slice_out(out, len, grid.steps() + 1) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match model_kappa(model, grid, tol) {
            Ok(kappa) => {
                out.copy_from_slice(&kappa);
                VcStatus::VcStatusOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Monte Carlo estimate of the performance functional for a control given
/// by its node values (`controls` must hold `vc_grid_len(grid)` values in
/// `[u_min, u_max]`).
///
/// # Safety
/// `model`/`grid` live handles; `controls` readable for `controls_len`
/// doubles; `j_out`/`se_out` valid slots.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vc_performance(
    model: *const VcModel,
    grid: *const VcGrid,
    controls: *const f64,
    controls_len: usize,
    u_min: f64,
    u_max: f64,
    n_paths: u64,
    base_seed: u64,
    j_out: *mut f64,
    se_out: *mut f64,
) -> VcStatus {
    guarded(|| {
        if model.is_null() || grid.is_null() || controls.is_null() || j_out.is_null()
            || se_out.is_null()
        {
            return fail(VcStatus::VcStatusNullPointer, "null argument");
        }
        let (model, grid) = unsafe { (&(*model).inner, &(*grid).inner) };
        if controls_len != grid.steps() + 1 {
            return fail(
                VcStatus::VcStatusBufferMismatch,
                &format!(
                    "control holds {controls_len} values, grid needs {}",
                    grid.steps() + 1
                ),
            );
        }
        let values = unsafe { std::slice::from_raw_parts(controls, controls_len) }.to_vec();
        let control = match ControlPath::from_values(values, (u_min, u_max)) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        let coeffs = model.coefficients();
        match performance(&coeffs, &control, grid, &model.levy, n_paths, base_seed) {
            Ok(est) => {
                unsafe {
                    *j_out = est.value;
                    *se_out = est.std_error;
                }
                VcStatus::VcStatusOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sample mean and standard error of the terminal change-of-measure weight
/// `M(T)` (a unit-mean sanity probe of the model's Girsanov kernel).
///
/// # Safety
/// `model`/`grid` live handles; `mean_out`/`se_out` valid slots.
#[no_mangle]
pub unsafe extern "C" fn vc_weight_terminal_mean(
    model: *const VcModel,
    grid: *const VcGrid,
    n_paths: u64,
    base_seed: u64,
    mean_out: *mut f64,
    se_out: *mut f64,
) -> VcStatus {
    guarded(|| {
        if model.is_null() || grid.is_null() || mean_out.is_null() || se_out.is_null() {
            return fail(VcStatus::VcStatusNullPointer, "null argument");
        }
        let (model, grid) = unsafe { (&(*model).inner, &(*grid).inner) };
        let girsanov = model.girsanov();
        let weights: Vec<volterra_control::Result<f64>> = par_map_paths(n_paths, |p| {
            let d = sample_driver(grid, &model.levy, base_seed, p);
            Ok(girsanov.weight_path(&d, grid, &model.levy)?.terminal())
        });
        let mut values = Vec::with_capacity(weights.len());
        for w in weights {
            match w {
                Ok(v) => values.push(v),
                Err(e) => return from_error(e),
            }
        }
        let est = mean_se(&values);
        unsafe {
            *mean_out = est.value;
            *se_out = est.std_error;
        }
        VcStatus::VcStatusOk
    })
}

/// Run a full experiment config (same behavior as `volterra run`); returns
/// the process exit code (0 ok, 1 validation error, 2 numeric failure).
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated strings (`out_dir` may
/// be null to use the config's own output directory).
#[no_mangle]
pub unsafe extern "C" fn vc_run_config(
    config_path: *const c_char,
    out_dir: *const c_char,
    workers: usize,
) -> i32 {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if config_path.is_null() {
            set_error("config_path is null");
            return 1;
        }
        let config_path = match unsafe { CStr::from_ptr(config_path) }.to_str() {
            Ok(p) => PathBuf::from(p),
            Err(_) => {
                set_error("config_path is not valid UTF-8");
                return 1;
            }
        };
        let out = if out_dir.is_null() {
            None
        } else {
            match unsafe { CStr::from_ptr(out_dir) }.to_str() {
                Ok(p) => Some(PathBuf::from(p)),
                Err(_) => {
                    set_error("out_dir is not valid UTF-8");
                    return 1;
                }
            }
        };
        run(&RunOptions {
            config_path,
            workers: if workers == 0 { None } else { Some(workers) },
            out_dir: out,
            expected_task: None,
        })
    }));
    match result {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            2
        }
    }
}
