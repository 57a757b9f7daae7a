//! C ABI for the `ifvb` library.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`IfvbStatus`]; results go through
//!   out-pointers. On failure [`ifvb_last_error`] describes the problem for
//!   the calling thread.
//! * Objects are opaque handles created by `*_new` / `*_parse` / `*_run`
//!   functions and released with the matching `*_free`. Passing NULL to a
//!   `*_free` function is a no-op.
//! * Panics never cross the boundary; they are reported as
//!   [`IfvbStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ifvb::harness::{self, ExperimentSpec};
use ifvb::{specfun, Capacity, Error, FisherConfig, FisherInverseState, FisherMode, RunOutcome};
use ifvb::nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfvbStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Config = 3,
    Shape = 4,
    Numeric = 5,
    State = 6,
    Unsupported = 7,
    Stall = 8,
    Parse = 9,
    Io = 10,
    InvalidUtf8 = 11,
    BufferTooSmall = 12,
    OutOfRange = 13,
    Panic = 99,
}

/// Storage layout of a Fisher inverse handle.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfvbFisherMode {
    Auto = 0,
    Dense = 1,
    Compact = 2,
}

/// Recursive inverse-Fisher estimate.
pub struct IfvbFisher(FisherInverseState);

/// Parsed experiment spec.
pub struct IfvbSpec(ExperimentSpec);

/// Outcomes of an experiment run, one per optimizer in the spec.
pub struct IfvbRunResult(Vec<RunOutcome>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> IfvbStatus {
    match e {
        Error::Domain(_) => IfvbStatus::Domain,
        Error::Config(_) => IfvbStatus::Config,
        Error::Shape { .. } => IfvbStatus::Shape,
        Error::Numeric { .. } => IfvbStatus::Numeric,
        Error::State(_) => IfvbStatus::State,
        Error::Unsupported(_) => IfvbStatus::Unsupported,
        Error::Stall { .. } => IfvbStatus::Stall,
        Error::Parse { .. } => IfvbStatus::Parse,
        Error::Io(_) => IfvbStatus::Io,
    }
}

struct Fail(IfvbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(IfvbStatus::NullPointer, format!("`{name}` is NULL"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IfvbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IfvbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IfvbStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| null(name))
}

unsafe fn deref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(name))
}

unsafe fn deref_mut<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| null(name))
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(IfvbStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

/// Copies `values` into `buf` and stores the full length in `written`.
/// Fails with `BufferTooSmall` (still reporting the needed length) when
/// `buf_len` is short.
unsafe fn copy_out(values: &[f64], buf: *mut f64, buf_len: usize, written: *mut usize) -> Result<(), Fail> {
    *out(written, "written")? = values.len();
    if buf_len < values.len() {
        return Err(Fail(
            IfvbStatus::BufferTooSmall,
            format!("buffer holds {buf_len} values, {} needed", values.len()),
        ));
    }
    slice_mut(buf, values.len(), "buf")?.copy_from_slice(values);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call into the library on this
/// thread.
#[no_mangle]
pub extern "C" fn ifvb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ifvb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `ln Γ(x)` for `x > 0`.
///
/// # Safety
/// `result` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_log_gamma(x: f64, result: *mut f64) -> IfvbStatus {
    guard(|| {
        *out(result, "result")? = specfun::try_log_gamma(x)?;
        Ok(())
    })
}

/// Digamma ψ(x) for `x > 0`.
///
/// # Safety
/// `result` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_digamma(x: f64, result: *mut f64) -> IfvbStatus {
    guard(|| {
        *out(result, "result")? = specfun::try_digamma(x)?;
        Ok(())
    })
}

/// Trigamma ψ₁(x) for `x > 0`.
///
/// # Safety
/// `result` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_trigamma(x: f64, result: *mut f64) -> IfvbStatus {
    guard(|| {
        *out(result, "result")? = specfun::try_trigamma(x)?;
        Ok(())
    })
}

/// Creates an inverse-Fisher estimate of dimension `dim` starting from
/// `H₀ = epsilon · I`. `capacity = 0` means unbounded.
///
/// # Safety
/// `handle_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_new(
    dim: usize,
    epsilon: f64,
    c_beta: f64,
    beta: f64,
    capacity: usize,
    mode: IfvbFisherMode,
    handle_out: *mut *mut IfvbFisher,
) -> IfvbStatus {
    guard(|| {
        let slot = out(handle_out, "handle_out")?;
        let config = FisherConfig {
            epsilon,
            c_beta,
            beta,
            capacity: if capacity == 0 {
                Capacity::Unbounded
            } else {
                Capacity::Bounded(capacity)
            },
            mode: match mode {
                IfvbFisherMode::Auto => FisherMode::Auto,
                IfvbFisherMode::Dense => FisherMode::Dense,
                IfvbFisherMode::Compact => FisherMode::Compact,
            },
        };
        let state = FisherInverseState::init(dim, config)?;
        *slot = Box::into_raw(Box::new(IfvbFisher(state)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a pointer from [`ifvb_fisher_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_free(handle: *mut IfvbFisher) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Absorbs one score vector of length `len`.
///
/// # Safety
/// `handle` must be a live handle; `phi` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_absorb_score(handle: *mut IfvbFisher, phi: *const f64, len: usize) -> IfvbStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        h.0.absorb_score(&DVector::from_column_slice(slice(phi, len, "phi")?))?;
        Ok(())
    })
}

/// Absorbs one regularizer draw of length `len`.
///
/// # Safety
/// `handle` must be a live handle; `z` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_absorb_regularizer(handle: *mut IfvbFisher, z: *const f64, len: usize) -> IfvbStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        h.0.absorb_regularizer(&DVector::from_column_slice(slice(z, len, "z")?))?;
        Ok(())
    })
}

/// Writes `H⁻¹ v` (times the score count when `scaled`) to `result`, which
/// must hold `len` doubles.
///
/// # Safety
/// `handle` must be a live handle; `v` and `result` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_apply_inverse(
    handle: *mut IfvbFisher,
    v: *const f64,
    len: usize,
    scaled: bool,
    result: *mut f64,
) -> IfvbStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        let r = h.0.apply_inverse(&DVector::from_column_slice(slice(v, len, "v")?), scaled)?;
        slice_mut(result, len, "result")?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

/// Number of absorbed score vectors.
///
/// # Safety
/// `handle` must be a live handle; `count` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_fisher_count(handle: *const IfvbFisher, count: *mut usize) -> IfvbStatus {
    guard(|| {
        *out(count, "count")? = deref(handle, "handle")?.0.count();
        Ok(())
    })
}

/// Parses spec text (`key=value` tokens).
///
/// # Safety
/// `text` must be a NUL-terminated string; `handle_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_spec_parse(text: *const c_char, handle_out: *mut *mut IfvbSpec) -> IfvbStatus {
    guard(|| {
        let slot = out(handle_out, "handle_out")?;
        let spec = harness::parse_spec(str_arg(text, "text")?)?;
        *slot = Box::into_raw(Box::new(IfvbSpec(spec)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a pointer from [`ifvb_spec_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifvb_spec_free(handle: *mut IfvbSpec) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Overrides the output directory of a spec.
///
/// # Safety
/// `handle` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ifvb_spec_set_output(handle: *mut IfvbSpec, dir: *const c_char) -> IfvbStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        h.0.output = str_arg(dir, "dir")?.into();
        Ok(())
    })
}

/// Renders the spec as text. `written` receives the length in bytes
/// including the terminating NUL; with a short buffer the call fails with
/// `BufferTooSmall` and writes nothing else.
///
/// # Safety
/// `handle` must be a live handle; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_spec_render(
    handle: *const IfvbSpec,
    buf: *mut c_char,
    buf_len: usize,
    written: *mut usize,
) -> IfvbStatus {
    guard(|| {
        let text = harness::render(&deref(handle, "handle")?.0);
        let bytes = CString::new(text).map_err(|e| Fail(IfvbStatus::State, e.to_string()))?;
        let bytes = bytes.as_bytes_with_nul();
        *out(written, "written")? = bytes.len();
        if buf_len < bytes.len() {
            return Err(Fail(
                IfvbStatus::BufferTooSmall,
                format!("buffer holds {buf_len} bytes, {} needed", bytes.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        Ok(())
    })
}

/// Runs every optimizer in the spec, writing trace CSVs to its output
/// directory. Runs that stop on a numeric error still produce a result;
/// query them with [`ifvb_result_status`].
///
/// # Safety
/// `handle` must be a live handle; `result_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_spec_run(handle: *const IfvbSpec, result_out: *mut *mut IfvbRunResult) -> IfvbStatus {
    guard(|| {
        let slot = out(result_out, "result_out")?;
        let runs = harness::run_experiment(&deref(handle, "handle")?.0)?;
        let outcomes = runs.into_iter().map(|r| r.outcome).collect();
        *slot = Box::into_raw(Box::new(IfvbRunResult(outcomes)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a pointer from [`ifvb_spec_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_free(handle: *mut IfvbRunResult) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of optimizer runs in the result.
///
/// # Safety
/// `handle` must be a live handle; `count` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_count(handle: *const IfvbRunResult, count: *mut usize) -> IfvbStatus {
    guard(|| {
        *out(count, "count")? = deref(handle, "handle")?.0.len();
        Ok(())
    })
}

unsafe fn run_at<'a>(h: *const IfvbRunResult, index: usize) -> Result<&'a RunOutcome, Fail> {
    let r = deref(h, "handle")?;
    r.0.get(index)
        .ok_or_else(|| Fail(IfvbStatus::OutOfRange, format!("run index {index} out of range 0..{}", r.0.len())))
}

/// Status of run `index`: `Ok` if it finished normally, otherwise the code
/// of the error that stopped it (with the message in [`ifvb_last_error`]).
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_status(handle: *const IfvbRunResult, index: usize) -> IfvbStatus {
    guard(|| match &run_at(handle, index)?.status {
        Ok(()) => Ok(()),
        Err(e) => Err(e.clone().into()),
    })
}

/// Number of iterations completed by run `index`.
///
/// # Safety
/// `handle` must be a live handle; `iterations` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_iterations(
    handle: *const IfvbRunResult,
    index: usize,
    iterations: *mut usize,
) -> IfvbStatus {
    guard(|| {
        *out(iterations, "iterations")? = run_at(handle, index)?.state.s;
        Ok(())
    })
}

/// Final lower-bound value recorded by run `index` (NaN for an empty trace).
///
/// # Safety
/// `handle` must be a live handle; `elbo` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_final_elbo(handle: *const IfvbRunResult, index: usize, elbo: *mut f64) -> IfvbStatus {
    guard(|| {
        let run = run_at(handle, index)?;
        *out(elbo, "elbo")? = run.trace.last().map_or(f64::NAN, |t| t.elbo);
        Ok(())
    })
}

/// Copies the reported estimate of run `index` (the averaged iterate for
/// AIFVB) into `buf`.
///
/// # Safety
/// `handle` must be a live handle; `buf` must hold `buf_len` doubles and
/// `written` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ifvb_result_estimate(
    handle: *const IfvbRunResult,
    index: usize,
    buf: *mut f64,
    buf_len: usize,
    written: *mut usize,
) -> IfvbStatus {
    guard(|| copy_out(run_at(handle, index)?.estimate().as_slice(), buf, buf_len, written))
}
