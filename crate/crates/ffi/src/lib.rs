//! C ABI over `psearch`.
//!
//! Every call returns a [`PsStatus`]. On failure the message is available
//! from [`ps_last_error`] on the same thread until the next failing call.
//! Objects and strings handed out by the library must be released with
//! [`ps_dist_free`] and [`ps_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use psearch::cli::MarketSpec;
use psearch::dist::{FusionSpec, ValueDistribution};
use psearch::equilibrium::check_symmetric_equilibrium;
use psearch::market::simulate_market;
use psearch::persuade::example2_payoff;
use psearch::search::reservation_value;

/// Opaque value distribution.
pub struct PsDistribution(ValueDistribution);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidInput = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PsStatus, String);

impl From<psearch::Error> for Failure {
    fn from(e: psearch::Error) -> Self {
        Failure(PsStatus::InvalidInput, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(PsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn parse<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(s).map_err(|e| Failure(PsStatus::InvalidJson, format!("invalid {what}: {e}")))
}

unsafe fn dist<'a>(d: *const PsDistribution) -> Result<&'a ValueDistribution, Failure> {
    d.as_ref().map(|d| &d.0).ok_or_else(|| null("distribution"))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    put(out, CString::new(s).expect("JSON has no nul").into_raw())
}

unsafe fn put_dist(out: *mut *mut PsDistribution, d: ValueDistribution) -> Result<(), Failure> {
    put(out, Box::into_raw(Box::new(PsDistribution(d))))
}

/// Message of the last failure on this thread, or null. Owned by the
/// library; do not free.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_from_json(json: *const c_char, out: *mut *mut PsDistribution) -> PsStatus {
    guard(|| {
        let d = parse(text(json, "json")?, "distribution")?;
        put_dist(out, d)
    })
}

/// # Safety
/// `d` must come from this library; `out` receives a string for
/// [`ps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ps_dist_to_json(d: *const PsDistribution, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let s = serde_json::to_string(dist(d)?).expect("distribution serialises");
        put_string(out, s)
    })
}

/// # Safety
/// `d` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_free(d: *mut PsDistribution) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// `s` must be a string returned by this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_mean(d: *const PsDistribution, out: *mut f64) -> PsStatus {
    guard(|| put(out, dist(d)?.mean()))
}

/// `E[max(X - t, 0)]`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_expected_excess(d: *const PsDistribution, t: f64, out: *mut f64) -> PsStatus {
    guard(|| put(out, dist(d)?.expected_excess(t)))
}

/// `P(X <= x)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_cdf(d: *const PsDistribution, x: f64, out: *mut f64) -> PsStatus {
    guard(|| put(out, dist(d)?.cdf_at(x)))
}

/// Whether `d` is a mean-preserving contraction of `of`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_is_mpc(
    d: *const PsDistribution,
    of: *const PsDistribution,
    tol: f64,
    out: *mut bool,
) -> PsStatus {
    guard(|| {
        let v = dist(d)?.is_mpc(dist(of)?, tol)?;
        put(out, v)
    })
}

/// # Safety
/// `spec_json` is `{"regions": [[lo, hi, fraction], ...]}`; `out` receives a
/// new handle.
#[no_mangle]
pub unsafe extern "C" fn ps_dist_fuse(
    d: *const PsDistribution,
    spec_json: *const c_char,
    out: *mut *mut PsDistribution,
) -> PsStatus {
    guard(|| {
        let spec: FusionSpec = parse(text(spec_json, "spec")?, "fusion spec")?;
        let fused = dist(d)?.fuse(&spec)?;
        put_dist(out, fused)
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ps_reservation_value(d: *const PsDistribution, price: f64, cost: f64, out: *mut f64) -> PsStatus {
    guard(|| {
        let z = reservation_value(dist(d)?, price, cost)?;
        put(out, z)
    })
}

#[no_mangle]
pub extern "C" fn ps_example2_payoff(x: f64) -> f64 {
    example2_payoff(x)
}

/// Simulates the market described by `spec_json` (the CLI's market file)
/// and returns the outcome as JSON.
///
/// # Safety
/// `spec_json` must be nul-terminated; `out` receives a string for
/// [`ps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ps_simulate_json(spec_json: *const c_char, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let spec: MarketSpec = parse(text(spec_json, "spec")?, "market spec")?;
        let config = spec.config(None, None);
        let outcome = simulate_market(&config, &spec.strategies(), &spec.conjecture)?;
        put_string(out, serde_json::to_string(&outcome).expect("outcome serialises"))
    })
}

/// Runs the deviation search on the spec's conjecture and returns the
/// certification report as JSON.
///
/// # Safety
/// As for [`ps_simulate_json`].
#[no_mangle]
pub unsafe extern "C" fn ps_check_json(spec_json: *const c_char, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let spec: MarketSpec = parse(text(spec_json, "spec")?, "market spec")?;
        let config = spec.config(None, None);
        let options = spec.search.clone().unwrap_or_default();
        let report = check_symmetric_equilibrium(&spec.conjecture, &config, &options)?;
        put_string(out, serde_json::to_string(&report).expect("report serialises"))
    })
}
