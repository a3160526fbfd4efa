//! C ABI for the controller-synthesis library: opaque controller handles,
//! status codes mirroring the CLI exit codes, and a JSON-in/JSON-out design
//! entry point. The generated header lives in `include/hiem.h`.
//!
//! All functions are panic-safe: a caught panic reports
//! `HIEM_STATUS_INTERNAL` (or a null pointer) and stores a message
//! retrievable through [`hiem_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;

use hiem::cli::{run_design, ControllerFile, DesignMode, ProblemFile};
use hiem::HomogeneousController;

/// Status codes of every fallible call; aligned with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiemStatus {
    Ok = 0,
    InvalidInput = 1,
    Infeasible = 2,
    Divergence = 3,
    VerificationFailed = 4,
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).ok();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn status_of(e: &hiem::cli::CliError) -> HiemStatus {
    match e.exit_code() {
        1 => HiemStatus::InvalidInput,
        2 => HiemStatus::Infeasible,
        3 => HiemStatus::Divergence,
        4 => HiemStatus::VerificationFailed,
        _ => HiemStatus::Internal,
    }
}

/// Opaque controller handle.
pub struct HiemController {
    inner: HomogeneousController,
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, HiemStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(HiemStatus::InvalidInput);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        HiemStatus::InvalidInput
    })
}

/// Message of the most recent error on this thread, or null when the last
/// call succeeded. The pointer stays valid until the next failing call on
/// the same thread.
#[no_mangle]
pub extern "C" fn hiem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |msg| msg.as_ptr())
    })
}

/// Builds a controller from the JSON document written by the design
/// pipeline (`controller.json`). Returns null on error.
///
/// # Safety
/// `json` must point to a NUL-terminated string that stays valid for the
/// duration of the call. The returned handle must be released with
/// [`hiem_controller_free`].
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_from_json(json: *const c_char) -> *mut HiemController {
    let result = catch_unwind(AssertUnwindSafe(|| {
        clear_error();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(_) => return ptr::null_mut(),
        };
        let file: ControllerFile = match serde_json::from_str(text) {
            Ok(f) => f,
            Err(e) => {
                set_error(format!("controller JSON: {e}"));
                return ptr::null_mut();
            }
        };
        match file.build() {
            Ok(inner) => Box::into_raw(Box::new(HiemController { inner })),
            Err(e) => {
                set_error(e.to_string());
                ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic in hiem_controller_from_json");
        ptr::null_mut()
    })
}

/// Releases a controller handle. Null is accepted and ignored.
///
/// # Safety
/// `handle` must be null or a pointer previously returned by
/// [`hiem_controller_from_json`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_free(handle: *mut HiemController) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// State dimension of the controller, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_state_dim(handle: *const HiemController) -> usize {
    handle.as_ref().map_or(0, |h| h.inner.n())
}

/// Input dimension of the controller, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_input_dim(handle: *const HiemController) -> usize {
    handle.as_ref().map_or(0, |h| h.inner.m())
}

/// Evaluates the feedback at a state. `x` carries `state_dim` values,
/// `u_out` receives `input_dim` values.
///
/// # Safety
/// `handle` must be a live handle; `x` must point to `state_dim` readable
/// doubles and `u_out` to `input_dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_eval(
    handle: *const HiemController,
    x: *const f64,
    state_dim: usize,
    u_out: *mut f64,
    input_dim: usize,
) -> HiemStatus {
    let result = catch_unwind(AssertUnwindSafe(|| {
        clear_error();
        let Some(h) = handle.as_ref() else {
            set_error("null controller handle");
            return HiemStatus::InvalidInput;
        };
        if x.is_null() || u_out.is_null() {
            set_error("null buffer");
            return HiemStatus::InvalidInput;
        }
        if state_dim != h.inner.n() || input_dim != h.inner.m() {
            set_error(format!(
                "dimension mismatch: controller is {}-state/{}-input, buffers are {state_dim}/{input_dim}",
                h.inner.n(),
                h.inner.m()
            ));
            return HiemStatus::InvalidInput;
        }
        let state = DVector::from_column_slice(std::slice::from_raw_parts(x, state_dim));
        let u = h.inner.eval_u(&state);
        std::slice::from_raw_parts_mut(u_out, input_dim).copy_from_slice(u.as_slice());
        HiemStatus::Ok
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic in hiem_controller_eval");
        HiemStatus::Internal
    })
}

/// Canonical homogeneous norm of a state under the controller's dilation
/// and weight.
///
/// # Safety
/// `handle` must be a live handle; `x` must point to `state_dim` readable
/// doubles and `norm_out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn hiem_controller_hom_norm(
    handle: *const HiemController,
    x: *const f64,
    state_dim: usize,
    norm_out: *mut f64,
) -> HiemStatus {
    let result = catch_unwind(AssertUnwindSafe(|| {
        clear_error();
        let Some(h) = handle.as_ref() else {
            set_error("null controller handle");
            return HiemStatus::InvalidInput;
        };
        if x.is_null() || norm_out.is_null() {
            set_error("null buffer");
            return HiemStatus::InvalidInput;
        }
        if state_dim != h.inner.n() {
            set_error(format!(
                "dimension mismatch: controller is {}-state, buffer is {state_dim}",
                h.inner.n()
            ));
            return HiemStatus::InvalidInput;
        }
        let state = DVector::from_column_slice(std::slice::from_raw_parts(x, state_dim));
        *norm_out = h.inner.ctx().hom_norm(&state);
        HiemStatus::Ok
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic in hiem_controller_hom_norm");
        HiemStatus::Internal
    })
}

/// Runs the design pipeline on a problem document (the same JSON schema
/// the CLI reads) and returns a JSON document
/// `{"controller": ..., "certificate": ..., "log": ...}` as a
/// heap-allocated string, or null on error (see
/// [`hiem_last_error_message`]). `mode` is one of `linear`,
/// `homogeneous`, `upgrade`, `refit`.
///
/// # Safety
/// `problem_json` and `mode` must be NUL-terminated strings valid for the
/// call. The returned string must be released with [`hiem_string_free`].
#[no_mangle]
pub unsafe extern "C" fn hiem_design_json(
    problem_json: *const c_char,
    mode: *const c_char,
) -> *mut c_char {
    let result = catch_unwind(AssertUnwindSafe(|| {
        clear_error();
        let (problem_text, mode_text) = match (read_str(problem_json), read_str(mode)) {
            (Ok(p), Ok(m)) => (p, m),
            _ => return ptr::null_mut(),
        };
        let problem: ProblemFile = match serde_json::from_str(problem_text) {
            Ok(p) => p,
            Err(e) => {
                set_error(format!("problem JSON: {e}"));
                return ptr::null_mut();
            }
        };
        let mode: DesignMode = match mode_text.parse() {
            Ok(m) => m,
            Err(e) => {
                set_error(format!("{e}"));
                return ptr::null_mut();
            }
        };
        match run_design(&problem, mode) {
            Ok(artifacts) => {
                let doc = serde_json::json!({
                    "controller": artifacts.controller,
                    "certificate": artifacts.certificate,
                    "log": artifacts.log,
                });
                match CString::new(doc.to_string()) {
                    Ok(s) => s.into_raw(),
                    Err(_) => {
                        set_error("design output contained an interior NUL");
                        ptr::null_mut()
                    }
                }
            }
            Err(e) => {
                // Record the status class in the message for C callers.
                set_error(format!("[status {}] {e}", status_of(&e) as i32));
                ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic in hiem_design_json");
        ptr::null_mut()
    })
}

/// Releases a string returned by [`hiem_design_json`]. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer returned by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn hiem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn problem_json() -> CString {
        CString::new(
            serde_json::json!({
                "a": [[0.0, 1.0], [0.0, 0.0]],
                "b": [[0.0], [1.0]],
                "d": [[1.0, 0.0], [0.0, 1.0]],
                "q": [[4.0, 0.0], [0.0, 4.0]],
                "mu": -0.5
            })
            .to_string(),
        )
        .unwrap()
    }

    #[test]
    fn design_eval_roundtrip_through_the_abi() {
        let problem = problem_json();
        let mode = CString::new("homogeneous").unwrap();
        let out = unsafe { hiem_design_json(problem.as_ptr(), mode.as_ptr()) };
        assert!(!out.is_null(), "design failed: {:?}", unsafe {
            CStr::from_ptr(hiem_last_error_message()).to_str()
        });
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let controller_json = CString::new(doc["controller"].to_string()).unwrap();
        unsafe { hiem_string_free(out) };

        let handle = unsafe { hiem_controller_from_json(controller_json.as_ptr()) };
        assert!(!handle.is_null());
        assert_eq!(unsafe { hiem_controller_state_dim(handle) }, 2);
        assert_eq!(unsafe { hiem_controller_input_dim(handle) }, 1);

        let x = [0.3f64, -0.2];
        let mut u = [0.0f64];
        let status = unsafe { hiem_controller_eval(handle, x.as_ptr(), 2, u.as_mut_ptr(), 1) };
        assert_eq!(status, HiemStatus::Ok);
        assert!(u[0].is_finite() && u[0] != 0.0);

        let mut norm = 0.0f64;
        let status =
            unsafe { hiem_controller_hom_norm(handle, x.as_ptr(), 2, &mut norm as *mut f64) };
        assert_eq!(status, HiemStatus::Ok);
        assert!(norm > 0.0);

        unsafe { hiem_controller_free(handle) };
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let problem = problem_json();
        let mode = CString::new("linear").unwrap();
        let out = unsafe { hiem_design_json(problem.as_ptr(), mode.as_ptr()) };
        assert!(!out.is_null());
        let doc: serde_json::Value =
            serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
        let controller_json = CString::new(doc["controller"].to_string()).unwrap();
        unsafe { hiem_string_free(out) };
        let handle = unsafe { hiem_controller_from_json(controller_json.as_ptr()) };
        let x = [0.1f64, 0.2, 0.3];
        let mut u = [0.0f64];
        let status = unsafe { hiem_controller_eval(handle, x.as_ptr(), 3, u.as_mut_ptr(), 1) };
        assert_eq!(status, HiemStatus::InvalidInput);
        let msg = unsafe { CStr::from_ptr(hiem_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("dimension"));
        unsafe { hiem_controller_free(handle) };
    }

    #[test]
    fn malformed_input_yields_null_and_message() {
        let junk = CString::new("{not json").unwrap();
        let mode = CString::new("linear").unwrap();
        let out = unsafe { hiem_design_json(junk.as_ptr(), mode.as_ptr()) };
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(hiem_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("problem JSON"));

        let handle = unsafe { hiem_controller_from_json(junk.as_ptr()) };
        assert!(handle.is_null());
    }

    #[test]
    fn infeasible_design_reports_status_class() {
        // Disturbance column outside the structure matrix's reach makes the
        // homogeneous mode infeasible.
        let problem = CString::new(
            serde_json::json!({
                "a": [[0.0, 1.0], [0.0, 0.0]],
                "b": [[0.0], [1.0]],
                "d": [[1.0], [1.0]],
                "q": [[1.0]],
                "mu": -0.5
            })
            .to_string(),
        )
        .unwrap();
        let mode = CString::new("homogeneous").unwrap();
        let out = unsafe { hiem_design_json(problem.as_ptr(), mode.as_ptr()) };
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(hiem_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("[status 2]"), "{msg:?}");
    }
}
