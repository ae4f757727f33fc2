//! C bindings. JSON strings go in, JSON strings come out, and the two
//! objects worth keeping alive across calls (a parsed presentation and a
//! computed representation) travel as opaque handles. Every entry point
//! catches panics; errors are reported per thread via `fiber_last_error`.

use fiberlib::bundle::{represent_module, ModuleRepresentation};
use fiberlib::checks::{run_suite, Fault};
use fiberlib::embedding::{embed_fiber, EmbedParams};
use fiberlib::error::FiberError;
use fiberlib::measure::{pr_phi_function, FunctionClass, Measure, PointMap};
use fiberlib::modules::{ModuleElement, ModulePresentation};
use fiberlib::norms::FiberNorm;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

/// Outcome of a call. Anything other than `Ok` leaves a message readable
/// through `fiber_last_error` on the calling thread.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FiberStatus {
    /// The operation succeeded.
    Ok = 0,
    /// A verified property or tolerance failed.
    Failed = 1,
    /// The input could not be used.
    InvalidInput = 2,
    /// A required pointer was null.
    NullArgument = 3,
    /// The call panicked; the process survives and may continue.
    Panicked = 4,
}

/// Parsed module presentation.
pub struct FiberPresentation {
    inner: ModulePresentation,
}

/// Representation of a module as a bundle, with its defect report and the
/// per-atom embeddings needed to push further elements through.
pub struct FiberRepresentation {
    inner: ModuleRepresentation,
    measure: Arc<Measure>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg)
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &FiberError) -> FiberStatus {
    match e {
        FiberError::UnsatisfiableParams(_) | FiberError::ContractionViolated { .. } => {
            FiberStatus::Failed
        }
        _ => FiberStatus::InvalidInput,
    }
}

fn lib_error(e: FiberError) -> FiberStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn out_string(s: String) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(_) => {
            set_error("output contained NUL".into());
            std::ptr::null_mut()
        }
    }
}

/// NUL-terminated UTF-8 argument, or a status describing why not.
unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, FiberStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is null"));
        return Err(FiberStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format!("{name} is not UTF-8"));
            Err(FiberStatus::InvalidInput)
        }
    }
}

fn parse_json(text: &str, name: &str) -> Result<serde_json::Value, FiberStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(format!("{name} is not valid JSON: {e}"));
        FiberStatus::InvalidInput
    })
}

fn guarded(f: impl FnOnce() -> FiberStatus) -> FiberStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            FiberStatus::Panicked
        }
    }
}

fn guarded_ptr<T>(f: impl FnOnce() -> *mut T) -> *mut T {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic".into());
        std::ptr::null_mut()
    })
}

/// Most recent error on this thread as a fresh string, or null when the last
/// call succeeded.
///
/// # Safety
/// Release the returned pointer with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is accepted.
///
/// # Safety
/// `s` must have been returned by a function in this library and not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn fiber_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parses a presentation `{"measure": …, "gens": …, "fibers": …}`.
/// Returns null on error; see `fiber_last_error`.
///
/// # Safety
/// `json` must be NUL-terminated. Release the result with
/// `fiber_presentation_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_presentation_parse(json: *const c_char) -> *mut FiberPresentation {
    guarded_ptr(|| {
        let text = match unsafe { cstr_arg(json, "json") } {
            Ok(t) => t,
            Err(_) => return std::ptr::null_mut(),
        };
        let v = match parse_json(text, "json") {
            Ok(v) => v,
            Err(_) => return std::ptr::null_mut(),
        };
        match ModulePresentation::from_json(&v) {
            Ok(inner) => Box::into_raw(Box::new(FiberPresentation { inner })),
            Err(e) => {
                lib_error(e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Releases a presentation handle. Null is accepted.
///
/// # Safety
/// `p` must have come from `fiber_presentation_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fiber_presentation_free(p: *mut FiberPresentation) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Generator count of a presentation; 0 with an error set when `p` is null.
///
/// # Safety
/// `p` must be a live handle from `fiber_presentation_parse`, or null.
#[no_mangle]
pub unsafe extern "C" fn fiber_presentation_generators(p: *const FiberPresentation) -> usize {
    clear_error();
    match unsafe { p.as_ref() } {
        Some(h) => h.inner.gens(),
        None => {
            set_error("presentation is null".into());
            0
        }
    }
}

/// Represents a presentation as a bundle. `depth` sets the ambient space to
/// 2^depth coordinates, `net` the functional-net resolution, `tol` the
/// acceptable defect. Returns null on error; see `fiber_last_error`.
///
/// # Safety
/// `p` must be a live handle. Release the result with
/// `fiber_representation_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_represent(
    p: *const FiberPresentation,
    depth: usize,
    net: usize,
    tol: f64,
) -> *mut FiberRepresentation {
    guarded_ptr(|| {
        let h = match unsafe { p.as_ref() } {
            Some(h) => h,
            None => {
                set_error("presentation is null".into());
                return std::ptr::null_mut();
            }
        };
        let params = EmbedParams {
            depth,
            resolution: net,
            tol,
        };
        match represent_module(&h.inner, &params) {
            Ok(inner) => Box::into_raw(Box::new(FiberRepresentation {
                inner,
                measure: h.inner.measure().clone(),
            })),
            Err(e) => {
                lib_error(e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Releases a representation handle. Null is accepted.
///
/// # Safety
/// `r` must have come from `fiber_represent` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fiber_representation_free(r: *mut FiberRepresentation) {
    if !r.is_null() {
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Largest certified norm defect across atoms; NaN when `r` is null.
///
/// # Safety
/// `r` must be a live handle from `fiber_represent`, or null.
#[no_mangle]
pub unsafe extern "C" fn fiber_representation_max_defect(r: *const FiberRepresentation) -> f64 {
    clear_error();
    match unsafe { r.as_ref() } {
        Some(h) => h.inner.report.max_defect,
        None => {
            set_error("representation is null".into());
            f64::NAN
        }
    }
}

/// The bundle as JSON. Returns null on error.
///
/// # Safety
/// `r` must be a live handle. Release the result with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_representation_bundle_json(
    r: *const FiberRepresentation,
) -> *mut c_char {
    guarded_ptr(|| match unsafe { r.as_ref() } {
        Some(h) => out_string(h.inner.bundle.to_json().to_string()),
        None => {
            set_error("representation is null".into());
            std::ptr::null_mut()
        }
    })
}

/// The defect report as JSON. Returns null on error.
///
/// # Safety
/// `r` must be a live handle. Release the result with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_representation_report_json(
    r: *const FiberRepresentation,
) -> *mut c_char {
    guarded_ptr(|| match unsafe { r.as_ref() } {
        Some(h) => out_string(h.inner.report.to_json().to_string()),
        None => {
            set_error("representation is null".into());
            std::ptr::null_mut()
        }
    })
}

/// Pushes a module element `{"coeffs": [{"values": …}, …]}` through the
/// representation and returns the resulting section as JSON, one ambient
/// vector per positive atom. Returns null on error.
///
/// # Safety
/// `r` must be a live handle and `element_json` NUL-terminated. Release the
/// result with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_represent_element(
    r: *const FiberRepresentation,
    element_json: *const c_char,
) -> *mut c_char {
    guarded_ptr(|| {
        let h = match unsafe { r.as_ref() } {
            Some(h) => h,
            None => {
                set_error("representation is null".into());
                return std::ptr::null_mut();
            }
        };
        let text = match unsafe { cstr_arg(element_json, "element_json") } {
            Ok(t) => t,
            Err(_) => return std::ptr::null_mut(),
        };
        let v = match parse_json(text, "element_json") {
            Ok(v) => v,
            Err(_) => return std::ptr::null_mut(),
        };
        let elem = match ModuleElement::from_json(&v, &h.measure) {
            Ok(e) => e,
            Err(e) => {
                lib_error(e);
                return std::ptr::null_mut();
            }
        };
        match h.inner.represent_element(&elem) {
            Ok(s) => out_string(h.inner.bundle.section_to_json(&s).to_string()),
            Err(e) => {
                lib_error(e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Runs a law suite ("all", "measure", "lifting", "norms", "modules",
/// "embedding", "bundle") with `cases` seeded instances per law. When
/// `out_summary` is non-null it receives the summary JSON, also on `Failed`.
///
/// # Safety
/// `suite` must be NUL-terminated; `out_summary` must be null or valid for a
/// pointer write. Release `*out_summary` with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_check(
    suite: *const c_char,
    seed: u64,
    cases: usize,
    out_summary: *mut *mut c_char,
) -> FiberStatus {
    guarded(|| {
        let name = match unsafe { cstr_arg(suite, "suite") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let summary = match run_suite(name, seed, cases, Fault::None) {
            Ok(s) => s,
            Err(e) => return lib_error(e),
        };
        if !out_summary.is_null() {
            unsafe { out_summary.write(out_string(summary.to_json().to_string())) };
        }
        if summary.all_pass() {
            FiberStatus::Ok
        } else {
            let broken: Vec<&str> = summary
                .laws
                .iter()
                .filter(|l| !l.pass())
                .map(|l| l.law.as_str())
                .collect();
            set_error(format!("laws violated: {}", broken.join(", ")));
            FiberStatus::Failed
        }
    })
}

/// Embeds one fiber norm and reports `{"epsilon": …, "exact": …, …}` through
/// `out_json`. `Failed` means the achievable defect exceeds `tol`.
///
/// # Safety
/// `fiber_json` must be NUL-terminated; `out_json` must be null or valid for
/// a pointer write. Release `*out_json` with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_embed(
    fiber_json: *const c_char,
    depth: usize,
    net: usize,
    tol: f64,
    out_json: *mut *mut c_char,
) -> FiberStatus {
    guarded(|| {
        let text = match unsafe { cstr_arg(fiber_json, "fiber_json") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let v = match parse_json(text, "fiber_json") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let n = match FiberNorm::from_json(&v) {
            Ok(n) => n,
            Err(e) => return lib_error(e),
        };
        let params = EmbedParams {
            depth,
            resolution: net,
            tol,
        };
        let emb = match embed_fiber(&n, &fiberlib::linalg::identity(n.dim()), &params) {
            Ok(e) => e,
            Err(e) => return lib_error(e),
        };
        if !out_json.is_null() {
            let result = serde_json::json!({
                "depth": depth,
                "dim": n.dim(),
                "rank": n.rank(),
                "net_size": emb.net().duals.len(),
                "epsilon": emb.epsilon,
                "exact": emb.net().exact,
            });
            unsafe { out_json.write(out_string(result.to_string())) };
        }
        FiberStatus::Ok
    })
}

/// Averages a function along the fibers of a map. `map_json` is
/// `{"measure": …, "assign": …}`, `fn_json` a function over the source
/// measure; `out_json` receives the averaged function over the target.
///
/// # Safety
/// Both inputs must be NUL-terminated; `out_json` must be null or valid for
/// a pointer write. Release `*out_json` with `fiber_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fiber_pr_phi(
    map_json: *const c_char,
    fn_json: *const c_char,
    out_json: *mut *mut c_char,
) -> FiberStatus {
    guarded(|| {
        let map_text = match unsafe { cstr_arg(map_json, "map_json") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let fn_text = match unsafe { cstr_arg(fn_json, "fn_json") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let map_v = match parse_json(map_text, "map_json") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let measure_v = match map_v.get("measure") {
            Some(v) => v,
            None => {
                set_error("map_json is missing 'measure'".into());
                return FiberStatus::InvalidInput;
            }
        };
        let m = match Measure::from_json(measure_v) {
            Ok(m) => m,
            Err(e) => return lib_error(e),
        };
        let phi = match PointMap::from_json(&map_v, m.space()) {
            Ok(p) => p,
            Err(e) => return lib_error(e),
        };
        let fn_v = match parse_json(fn_text, "fn_json") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let f = match FunctionClass::from_json(&fn_v, &m) {
            Ok(f) => f,
            Err(e) => return lib_error(e),
        };
        let avg = match pr_phi_function(&f, &phi, &m) {
            Ok(a) => a,
            Err(e) => return lib_error(e),
        };
        if !out_json.is_null() {
            unsafe { out_json.write(out_string(avg.to_json().to_string())) };
        }
        FiberStatus::Ok
    })
}
