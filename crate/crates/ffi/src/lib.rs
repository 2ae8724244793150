//! C interface to the case-cohort estimators.
//!
//! Cohorts and fits are opaque handles created and freed by this library.
//! Every fallible function returns a [`CcStatus`]; on failure the message is
//! available from [`cc_last_error`] on the same thread until the next call.
//! Strings returned through `char **` are owned by the caller and released
//! with [`cc_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, c_int, size_t};

use casecohort::harness::run_study;
use casecohort::io::load_cohort;
use casecohort::{
    apply_design, fit_additive, fit_cox, AdditiveFitResult, Cohort, CovariatePath, CoxFitResult, DesignConfig,
    Error, FitOptions, StudyConfig, Subject,
};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Domain = 6,
    InvalidCohort = 7,
    ModelViolation = 8,
    EmptyRiskSet = 9,
    Singular = 10,
    NonConvergence = 11,
    Divergence = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcModel {
    Cox = 0,
    Additive = 1,
}

/// Opaque cohort handle.
pub struct CcCohort(Cohort);

enum FitInner {
    Cox(CoxFitResult),
    Additive(AdditiveFitResult),
}

/// Opaque fit handle.
pub struct CcFit(FitInner);

impl CcFit {
    fn theta(&self) -> &[f64] {
        match &self.0 {
            FitInner::Cox(f) => &f.theta_hat,
            FitInner::Additive(f) => &f.theta_hat,
        }
    }

    fn se(&self) -> &[f64] {
        match &self.0 {
            FitInner::Cox(f) => &f.se,
            FitInner::Additive(f) => &f.se,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> CcStatus {
    match err {
        Error::Domain(_) => CcStatus::Domain,
        Error::InvalidPath(_) | Error::InvalidCohort(_) => CcStatus::InvalidCohort,
        Error::Config(_) => CcStatus::Config,
        Error::ModelViolation(_) => CcStatus::ModelViolation,
        Error::EmptyRiskSet { .. } => CcStatus::EmptyRiskSet,
        Error::Singular(_) => CcStatus::Singular,
        Error::NonConvergence { .. } => CcStatus::NonConvergence,
        Error::Divergence { .. } => CcStatus::Divergence,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => CcStatus::Parse,
        Error::Io(_) => CcStatus::Io,
    }
}

struct Failure(CcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CcStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records its error message and converts panics into
/// [`CcStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            CcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CcStatus::InvalidArgument, "output contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a fully observed cohort with time-fixed covariates and unit
/// weights. `z` holds `n * d` values, row-major by subject; `delta[i]` is 0
/// or 1.
///
/// # Safety
/// `y` and `delta` must point to `n` elements, `z` to `n * d`, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cohort_from_arrays(
    n: size_t,
    d: size_t,
    y: *const f64,
    delta: *const c_int,
    z: *const f64,
    tau: f64,
    out: *mut *mut CcCohort,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = slice_arg(y, n, "y")?;
        let delta = slice_arg(delta, n, "delta")?;
        let z = slice_arg(z, n.checked_mul(d).ok_or_else(|| null("z"))?, "z")?;
        let subjects = (0..n)
            .map(|i| {
                let d_i = match delta[i] {
                    0 => false,
                    1 => true,
                    other => {
                        return Err(Failure(
                            CcStatus::InvalidArgument,
                            format!("delta[{i}] must be 0 or 1, got {other}"),
                        ))
                    }
                };
                let path = CovariatePath::constant(z[i * d..(i + 1) * d].to_vec())?;
                Ok(Subject::new(i as u64, y[i], d_i, path))
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        write_out(out, CcCohort(Cohort::new(subjects, tau, d)?));
        Ok(())
    })
}

/// Reads a cohort CSV and its `.meta.json` sidecar.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cohort_load(path: *const c_char, out: *mut *mut CcCohort) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        write_out(out, CcCohort(load_cohort(Path::new(path))?));
        Ok(())
    })
}

/// Number of subjects.
///
/// # Safety
/// `cohort` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cohort_len(cohort: *const CcCohort, out: *mut size_t) -> CcStatus {
    guard(|| {
        let cohort = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = cohort.0.len();
        Ok(())
    })
}

/// Samples and weights a cohort according to a JSON design
/// (`{"plan": {...}, "scheme": {...}}`), producing a new handle.
///
/// # Safety
/// `cohort` must be a live handle, `design_json` nul-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cohort_apply_design(
    cohort: *const CcCohort,
    design_json: *const c_char,
    pi_floor: f64,
    out: *mut *mut CcCohort,
) -> CcStatus {
    guard(|| {
        let cohort = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let design: DesignConfig =
            serde_json::from_str(str_arg(design_json, "design_json")?).map_err(Error::from)?;
        write_out(out, CcCohort(apply_design(&cohort.0, &design, pi_floor)?));
        Ok(())
    })
}

/// Releases a cohort handle. NULL is ignored.
///
/// # Safety
/// `cohort` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_cohort_free(cohort: *mut CcCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// Fits the model. `tol` and `max_iter` apply to the Cox Newton solver;
/// pass 0 for the defaults.
///
/// # Safety
/// `cohort` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_fit(
    cohort: *const CcCohort,
    model: CcModel,
    tol: f64,
    max_iter: size_t,
    out: *mut *mut CcFit,
) -> CcStatus {
    guard(|| {
        let cohort = cohort.as_ref().ok_or_else(|| null("cohort"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut opts = FitOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let fit = match model {
            CcModel::Cox => FitInner::Cox(fit_cox(&cohort.0, &opts)?),
            CcModel::Additive => FitInner::Additive(fit_additive(&cohort.0)?),
        };
        write_out(out, CcFit(fit));
        Ok(())
    })
}

/// Number of coefficients.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_dim(fit: *const CcFit) -> size_t {
    fit.as_ref().map_or(0, |f| f.theta().len())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: size_t) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            CcStatus::InvalidArgument,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Copies the estimate into `out`, which holds `len >= dim` doubles.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_theta(fit: *const CcFit, out: *mut f64, len: size_t) -> CcStatus {
    guard(|| copy_out(fit.as_ref().ok_or_else(|| null("fit"))?.theta(), out, len))
}

/// Copies the sandwich standard errors into `out`.
///
/// # Safety
/// As [`cc_fit_theta`].
#[no_mangle]
pub unsafe extern "C" fn cc_fit_se(fit: *const CcFit, out: *mut f64, len: size_t) -> CcStatus {
    guard(|| copy_out(fit.as_ref().ok_or_else(|| null("fit"))?.se(), out, len))
}

/// Copies the `dim × dim` covariance matrix, row-major, into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_cov(fit: *const CcFit, out: *mut f64, len: size_t) -> CcStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let cov = match &fit.0 {
            FitInner::Cox(f) => &f.cov,
            FitInner::Additive(f) => &f.cov,
        };
        let rows: Vec<f64> = cov.transpose().iter().copied().collect();
        copy_out(&rows, out, len)
    })
}

/// The whole fit as JSON; release with [`cc_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_to_json(fit: *const CcFit, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = match &fit.0 {
            FitInner::Cox(f) => serde_json::to_string(f),
            FitInner::Additive(f) => serde_json::to_string(f),
        }
        .map_err(Error::from)?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Releases a fit handle. NULL is ignored.
///
/// # Safety
/// `fit` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_free(fit: *mut CcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Runs a Monte Carlo study from a JSON configuration and returns the report
/// as JSON. `unstable` (optional) receives 1 when more than 20% of the
/// replicates were excluded.
///
/// # Safety
/// `config_json` must be nul-terminated, `report_json` writable and
/// `unstable` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cc_run_study(
    config_json: *const c_char,
    report_json: *mut *mut c_char,
    unstable: *mut c_int,
) -> CcStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let config: StudyConfig =
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let report = run_study(&config)?;
        if !unstable.is_null() {
            *unstable = c_int::from(report.unstable);
        }
        *report_json = to_c_string(serde_json::to_string(&report).map_err(Error::from)?)?;
        Ok(())
    })
}
