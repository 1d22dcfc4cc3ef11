//! C interface to the decoupling-field solver.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`FbsdeStatus`]; on failure a description is available from
//! [`fbsde_last_error`] on the same thread until the next call.
//! Strings returned by the library are released with [`fbsde_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fbsde_core::config::{Problem, RunConfig};
use fbsde_core::error::FbsdeError;
use fbsde_core::io::{save_field, write_ensemble_csv};
use fbsde_core::runner::verify_problem;
use fbsde_core::simulate::{simulate, PathEnsemble, SimulateOptions};
use fbsde_core::solver::{solve_backward, DecouplingField, SolveStatus};

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    GateFailure = 4,
    Singularity = 5,
    FixedPointFailure = 6,
    NumericalError = 7,
    IoError = 8,
    VerificationFailed = 9,
    Panic = 10,
}

/// A validated problem: utility, market, grid and run settings.
pub struct FbsdeProblem {
    inner: Problem,
}

/// A solved (possibly partial) decoupling field.
pub struct FbsdeField {
    inner: DecouplingField,
}

/// A simulated path ensemble.
pub struct FbsdeEnsemble {
    inner: PathEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &FbsdeError) -> FbsdeStatus {
    match e {
        FbsdeError::InvalidConfig(_)
        | FbsdeError::InvalidFamilyParams(_)
        | FbsdeError::InvalidMarket(_)
        | FbsdeError::InvalidGrid(_)
        | FbsdeError::DomainTooSmall { .. }
        | FbsdeError::Json(_) => FbsdeStatus::ConfigError,
        FbsdeError::GateFailure(_) => FbsdeStatus::GateFailure,
        FbsdeError::SingularityDetected { .. } => FbsdeStatus::Singularity,
        FbsdeError::FixedPointFailure { .. } => FbsdeStatus::FixedPointFailure,
        FbsdeError::QuadratureNonConvergence { .. } | FbsdeError::NonFiniteState { .. } => {
            FbsdeStatus::NumericalError
        }
        FbsdeError::Io(_) => FbsdeStatus::IoError,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<FbsdeStatus, (FbsdeStatus, String)>>(f: F) -> FbsdeStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FbsdeStatus::Panic
        }
    }
}

fn core_err(e: FbsdeError) -> (FbsdeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FbsdeStatus, String) {
    (FbsdeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FbsdeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FbsdeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (FbsdeStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Last error message on this thread, or null. Owned by the library and
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fbsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fbsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a run configuration (JSON text) and runs the condition gates.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_from_json(json: *const c_char, out: *mut *mut FbsdeProblem) -> FbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let cfg = RunConfig::from_json(text).map_err(core_err)?;
        let inner = Problem::new(cfg).map_err(core_err)?;
        *out = Box::into_raw(Box::new(FbsdeProblem { inner }));
        Ok(FbsdeStatus::Ok)
    })
}

/// # Safety
/// `p` must come from [`fbsde_problem_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_free(p: *mut FbsdeProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Scale parameter in effect for the problem.
///
/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_epsilon(p: *const FbsdeProblem, out: *mut f64) -> FbsdeStatus {
    guard(|| {
        let p = handle(p, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = p.inner.epsilon();
        Ok(FbsdeStatus::Ok)
    })
}

/// Runs the backward sweep. On `Singularity` the partial field (the steps
/// computed before the stop) is still returned through `out`.
///
/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_solve(p: *const FbsdeProblem, out: *mut *mut FbsdeField) -> FbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = &handle(p, "problem")?.inner;
        let (field, report) = solve_backward(&p.coefficients, &p.grid, &p.config.solver).map_err(core_err)?;
        let (status, msg) = match &report.status {
            SolveStatus::Converged => (FbsdeStatus::Ok, None),
            SolveStatus::SingularityDetected { t, lip } => (
                FbsdeStatus::Singularity,
                Some(FbsdeError::SingularityDetected { t: *t, lip: *lip }.to_string()),
            ),
            SolveStatus::FixedPointFailure { t, node } => {
                return Err(core_err(FbsdeError::FixedPointFailure {
                    t: *t,
                    node: node.clone(),
                }))
            }
        };
        *out = Box::into_raw(Box::new(FbsdeField { inner: field }));
        if let Some(m) = msg {
            set_error(m);
        }
        Ok(status)
    })
}

/// # Safety
/// `f` must come from [`fbsde_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_free(f: *mut FbsdeField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// `u(t, x_check, x)`; `x_check` holds `n` scaled factor coordinates.
///
/// # Safety
/// `f` must be a live field, `xcheck` readable for `n` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_evaluate(
    f: *const FbsdeField,
    t: f64,
    xcheck: *const f64,
    n: usize,
    x: f64,
    out: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let f = &handle(f, "field")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if n != f.grid.dim_n() {
            return Err((
                FbsdeStatus::InvalidArgument,
                format!("expected {} factor coordinates, got {n}", f.grid.dim_n()),
            ));
        }
        if n > 0 && xcheck.is_null() {
            return Err(null("xcheck"));
        }
        if !f.is_complete() && t < f.grid.time(f.first_step) {
            return Err((
                FbsdeStatus::InvalidArgument,
                format!("field is only available from t = {}", f.grid.time(f.first_step)),
            ));
        }
        if !(0.0..=f.grid.horizon).contains(&t) {
            return Err((FbsdeStatus::InvalidArgument, format!("t = {t} outside [0, {}]", f.grid.horizon)));
        }
        let xc = if n == 0 { &[][..] } else { std::slice::from_raw_parts(xcheck, n) };
        *out = f.evaluate(t, xc, x);
        Ok(FbsdeStatus::Ok)
    })
}

/// Largest `|u_x|` over the retained steps.
///
/// # Safety
/// `f` must be a live field and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_max_lip(f: *const FbsdeField, out: *mut f64) -> FbsdeStatus {
    guard(|| {
        let f = handle(f, "field")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.inner.max_lip();
        Ok(FbsdeStatus::Ok)
    })
}

/// Writes the field as JSON.
///
/// # Safety
/// `f` must be a live field and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_save(f: *const FbsdeField, path: *const c_char) -> FbsdeStatus {
    guard(|| {
        let f = handle(f, "field")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_field(&f.inner, &path).map_err(core_err)?;
        Ok(FbsdeStatus::Ok)
    })
}

/// Simulates `n_paths` paths along the field from the problem's initial
/// state, in the problem's form, with the solver's step count.
///
/// # Safety
/// `p` and `f` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_simulate(
    p: *const FbsdeProblem,
    f: *const FbsdeField,
    n_paths: usize,
    seed: u64,
    out: *mut *mut FbsdeEnsemble,
) -> FbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = &handle(p, "problem")?.inner;
        let f = &handle(f, "field")?.inner;
        let opts = SimulateOptions::new(n_paths, p.grid.steps, seed);
        let e = simulate(f, &p.coefficients, &p.xcheck0(), p.x0(), &opts).map_err(core_err)?;
        *out = Box::into_raw(Box::new(FbsdeEnsemble { inner: e }));
        Ok(FbsdeStatus::Ok)
    })
}

/// Number of paths in an ensemble, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn fbsde_ensemble_n_paths(e: *const FbsdeEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.inner.n_paths())
}

/// Writes the first `limit` paths as CSV; all paths when `limit` is 0.
///
/// # Safety
/// `e` must be a live ensemble and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fbsde_ensemble_write_csv(
    e: *const FbsdeEnsemble,
    path: *const c_char,
    limit: usize,
) -> FbsdeStatus {
    guard(|| {
        let e = handle(e, "ensemble")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let limit = (limit > 0).then_some(limit);
        write_ensemble_csv(&e.inner, &path, limit).map_err(core_err)?;
        Ok(FbsdeStatus::Ok)
    })
}

/// # Safety
/// `e` must come from [`fbsde_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbsde_ensemble_free(e: *mut FbsdeEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Runs the problem's configured checks on `f` and returns the report as
/// JSON through `out_json`. Returns `VerificationFailed` (with the report
/// still set) when any check fails.
///
/// # Safety
/// `p` and `f` must be live handles and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_verify(
    p: *const FbsdeProblem,
    f: *const FbsdeField,
    out_json: *mut *mut c_char,
) -> FbsdeStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let p = &handle(p, "problem")?.inner;
        let f = &handle(f, "field")?.inner;
        let report = verify_problem(p, f, None).map_err(core_err)?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| core_err(e.into()))?;
        let c = CString::new(text).map_err(|e| (FbsdeStatus::NumericalError, e.to_string()))?;
        *out_json = c.into_raw();
        if report.passed() {
            Ok(FbsdeStatus::Ok)
        } else {
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
            set_error(format!("failed checks: {}", failed.join(", ")));
            Ok(FbsdeStatus::VerificationFailed)
        }
    })
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a string returned by this library, released once.
#[no_mangle]
pub unsafe extern "C" fn fbsde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
