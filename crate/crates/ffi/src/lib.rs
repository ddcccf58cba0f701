//! C ABI over a trained survkan model.
//!
//! Every function returns a [`SurvkanStatus`]; outputs go through pointer
//! arguments. On failure, [`survkan_last_error`] describes the most recent
//! error on the calling thread. Models are opaque handles released with
//! [`survkan_model_free`]; strings handed out by the library are released
//! with [`survkan_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use survkan::hazard::{self, DEFAULT_INTEGRATION_POINTS};
use survkan::kan::KanNetwork;
use survkan::model_io;
use survkan::Error;

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvkanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NotFound = 3,
    Format = 4,
    Io = 5,
    /// Any other engine error.
    Failed = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

/// Opaque handle to a loaded model.
pub struct SurvkanModel {
    net: KanNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SurvkanStatus {
    match e {
        Error::InvalidInput(_) | Error::Dimension { .. } => SurvkanStatus::InvalidInput,
        Error::NotFound(_) => SurvkanStatus::NotFound,
        Error::Format(_) | Error::Parse(_) => SurvkanStatus::Format,
        Error::Io(_) => SurvkanStatus::Io,
        _ => SurvkanStatus::Failed,
    }
}

struct Failure(SurvkanStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SurvkanStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SurvkanStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            SurvkanStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SurvkanStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SurvkanStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn model<'a>(m: *const SurvkanModel) -> Result<&'a KanNetwork, Failure> {
    m.as_ref().map(|m| &m.net).ok_or_else(|| null("model"))
}

unsafe fn features<'a>(f: *const f64, n: usize) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if f.is_null() {
        return Err(null("features"));
    }
    Ok(slice::from_raw_parts(f, n))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn handle(net: KanNetwork) -> *mut SurvkanModel {
    Box::into_raw(Box::new(SurvkanModel { net }))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn survkan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn survkan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_load(path: *const c_char, out: *mut *mut SurvkanModel) -> SurvkanStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, handle(model_io::load_model(path)?), "out")
    })
}

/// Parses a model from its text form.
///
/// # Safety
/// `model_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_from_string(
    model_text: *const c_char,
    out: *mut *mut SurvkanModel,
) -> SurvkanStatus {
    guard(|| {
        let s = text(model_text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, handle(model_io::model_from_str(s)?), "out")
    })
}

/// Serializes a model; release the result with [`survkan_string_free`].
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_to_string(
    m: *const SurvkanModel,
    created: *const c_char,
    out: *mut *mut c_char,
) -> SurvkanStatus {
    guard(|| {
        let net = model(m)?;
        let created = text(created, "created")?;
        let s = model_io::model_to_string(net, created)?;
        let c = CString::new(s).map_err(|_| Failure(SurvkanStatus::Format, "embedded NUL".into()))?;
        put(out, c.into_raw(), "out")
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_free(m: *mut SurvkanModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn survkan_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of raw features the model expects (time excluded).
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_feature_count(m: *const SurvkanModel, out: *mut usize) -> SurvkanStatus {
    guard(|| put(out, model(m)?.feature_count(), "out"))
}

/// Training horizon `t_max` in raw time units.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survkan_model_time_scale(m: *const SurvkanModel, out: *mut f64) -> SurvkanStatus {
    guard(|| put(out, model(m)?.time_scale(), "out"))
}

/// `log h(t | x)` per unit of raw time.
///
/// # Safety
/// `features` must point to `n_features` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survkan_log_hazard(
    m: *const SurvkanModel,
    features_ptr: *const f64,
    n_features: usize,
    time: f64,
    out: *mut f64,
) -> SurvkanStatus {
    guard(|| {
        let v = hazard::log_hazard(model(m)?, features(features_ptr, n_features)?, time)?;
        put(out, v, "out")
    })
}

/// `H(t | x)` by the trapezoid rule with `k` points (0 selects the default).
///
/// # Safety
/// `features` must point to `n_features` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survkan_cumulative_hazard(
    m: *const SurvkanModel,
    features_ptr: *const f64,
    n_features: usize,
    time: f64,
    k: usize,
    out: *mut f64,
) -> SurvkanStatus {
    guard(|| {
        let k = if k == 0 { DEFAULT_INTEGRATION_POINTS } else { k };
        let v = hazard::cumulative_hazard(model(m)?, features(features_ptr, n_features)?, time, k)?;
        put(out, v, "out")
    })
}

/// Writes `S(t_j | x)` for each of the `n_times` sorted grid times into
/// `out_survival`, integrating each segment with `k_per_segment` points
/// (0 selects 5).
///
/// # Safety
/// `times` and `out_survival` must each hold `n_times` doubles.
#[no_mangle]
pub unsafe extern "C" fn survkan_survival_curve(
    m: *const SurvkanModel,
    features_ptr: *const f64,
    n_features: usize,
    times: *const f64,
    n_times: usize,
    k_per_segment: usize,
    out_survival: *mut f64,
) -> SurvkanStatus {
    guard(|| {
        let net = model(m)?;
        let x = features(features_ptr, n_features)?;
        if n_times > 0 && (times.is_null() || out_survival.is_null()) {
            return Err(null("times or out_survival"));
        }
        let grid: &[f64] = if n_times == 0 { &[] } else { slice::from_raw_parts(times, n_times) };
        let k = if k_per_segment == 0 { 5 } else { k_per_segment };
        let curve = hazard::survival_curve(net, x, grid, k)?;
        if n_times > 0 {
            ptr::copy_nonoverlapping(curve.survival().as_ptr(), out_survival, n_times);
        }
        Ok(())
    })
}
