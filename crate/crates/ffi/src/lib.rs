//! C ABI over the see360 library.
//!
//! Images cross the boundary as planar `[3,H,W]` `float` arrays in [0,1].
//! Every entry point returns an [`S360Status`]; on failure the message is
//! kept per thread and can be read with [`s360_last_error_message`].
//! Handles are opaque and must be released with [`s360_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use see360::clae::digitize_angle;
use see360::inference::{oracle_checkpoint, LoadedModel};
use see360::losses::{psnr, ssim_metric};
use see360::{Error, Tensor};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S360Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    ConfigConflict = 6,
    ReferenceCollision = 7,
    Dataset = 8,
    Panic = 9,
    Other = 10,
}

/// A loaded predictor. Immutable once created, so one handle may be shared
/// by several threads.
pub struct S360Model {
    inner: LoadedModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct S360ModelInfo {
    pub height: usize,
    pub width: usize,
    pub tau_deg: f64,
    pub delta: usize,
    /// 1 when the model echoes ground truth instead of predicting.
    pub is_oracle: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> S360Status {
    match e {
        Error::InvalidArgument(_) => S360Status::InvalidArgument,
        Error::Shape(_) => S360Status::Shape,
        Error::Io { .. } => S360Status::Io,
        Error::Format(_) | Error::Json(_) | Error::Image(_) => S360Status::Format,
        Error::ConfigConflict(_) => S360Status::ConfigConflict,
        Error::ReferenceCollision { .. } => S360Status::ReferenceCollision,
        Error::Dataset(_) => S360Status::Dataset,
        _ => S360Status::Other,
    }
}

/// Failure carried out of a guarded body.
enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> S360Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            S360Status::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            S360Status::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            S360Status::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass either null or a pointer valid for reads.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: callers pass either null or a pointer valid for writes.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

/// Views `len` floats at `p`.
fn slice<'a>(p: *const f32, len: usize, what: &'static str) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable floats at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn image(p: *const f32, height: usize, width: usize, what: &'static str) -> Result<Tensor<f32>, Fail> {
    let n = 3usize
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail::Lib(Error::InvalidArgument(format!("bad image size {width}x{height}"))))?;
    Ok(Tensor::from_vec(&[1, 3, height, width], slice(p, n, what)?.to_vec())?)
}

fn into_handle(model: LoadedModel, out: *mut *mut S360Model) -> Result<(), Fail> {
    let out = non_null_mut(out, "out")?;
    *out = Box::into_raw(Box::new(S360Model { inner: model }));
    Ok(())
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s360_model_load(path: *const c_char, out: *mut *mut S360Model) -> S360Status {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        // SAFETY: checked non-null; the caller guarantees NUL termination.
        let path = unsafe { CStr::from_ptr(path) };
        let path = path
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        into_handle(LoadedModel::load(Path::new(path))?, out)
    })
}

/// Creates a model that returns the ground truth it is given.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s360_model_new_oracle(
    height: usize,
    width: usize,
    tau_deg: f64,
    delta: usize,
    out: *mut *mut S360Model,
) -> S360Status {
    guard(|| {
        let ckpt = oracle_checkpoint(height, width, tau_deg, delta);
        into_handle(LoadedModel::from_checkpoint(&ckpt)?, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s360_model_free(model: *mut S360Model) {
    if !model.is_null() {
        // SAFETY: produced by Box::into_raw in `into_handle`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s360_model_info(model: *const S360Model, out: *mut S360ModelInfo) -> S360Status {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        *non_null_mut(out, "out")? = S360ModelInfo {
            height: m.config.height,
            width: m.config.width,
            tau_deg: m.config.tau_deg,
            delta: m.config.delta,
            is_oracle: matches!(m.renderer, see360::inference::Renderer::Oracle) as u8,
        };
        Ok(())
    })
}

/// Predicts the view `theta_deg` past `left`, with `right` one reference
/// spacing further. `gt` may be null except for oracle models. `out`
/// receives `3·height·width` floats.
///
/// # Safety
/// Image pointers must each address `3·height·width` floats.
#[no_mangle]
pub unsafe extern "C" fn s360_render(
    model: *const S360Model,
    left: *const f32,
    right: *const f32,
    gt: *const f32,
    height: usize,
    width: usize,
    theta_deg: f64,
    out: *mut f32,
) -> S360Status {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let l = image(left, height, width, "left")?;
        let r = image(right, height, width, "right")?;
        let g = if gt.is_null() {
            None
        } else {
            Some(image(gt, height, width, "gt")?)
        };
        let code = digitize_angle(theta_deg, m.config.tau_deg, m.config.delta)?;
        let pred = m.predict(&l, &r, &[code], g.as_ref())?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        // SAFETY: the caller guarantees room for the whole image.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, pred.numel()) };
        dst.copy_from_slice(pred.data());
        Ok(())
    })
}

/// One-hot pose index of `theta_deg` within a reference spacing `tau_deg`.
///
/// # Safety
/// `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn s360_digitize_angle(
    theta_deg: f64,
    tau_deg: f64,
    delta: usize,
    out_index: *mut usize,
) -> S360Status {
    guard(|| {
        let code = digitize_angle(theta_deg, tau_deg, delta)?;
        *non_null_mut(out_index, "out_index")? = code.index;
        Ok(())
    })
}

fn metric(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
    f: impl FnOnce(&Tensor<f32>, &Tensor<f32>) -> see360::Result<f64>,
) -> S360Status {
    guard(|| {
        let a = image(a, height, width, "a")?;
        let b = image(b, height, width, "b")?;
        let v = f(&a, &b)?;
        *non_null_mut(out, "out")? = v;
        Ok(())
    })
}

/// PSNR in dB ignoring `border` pixels on each side; +inf for identical
/// images.
///
/// # Safety
/// `a` and `b` must each address `3·height·width` floats; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s360_psnr(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    border: usize,
    out: *mut f64,
) -> S360Status {
    metric(a, b, height, width, out, |a, b| psnr(a, b, border))
}

/// Mean SSIM ignoring `border` pixels on each side.
///
/// # Safety
/// `a` and `b` must each address `3·height·width` floats; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s360_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    border: usize,
    out: *mut f64,
) -> S360Status {
    metric(a, b, height, width, out, |a, b| ssim_metric(a, b, border))
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn s360_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn s360_status_name(status: S360Status) -> *const c_char {
    let s: &'static CStr = match status {
        S360Status::Ok => c"ok",
        S360Status::NullPointer => c"null_pointer",
        S360Status::InvalidArgument => c"invalid_argument",
        S360Status::Shape => c"shape",
        S360Status::Io => c"io",
        S360Status::Format => c"format",
        S360Status::ConfigConflict => c"config_conflict",
        S360Status::ReferenceCollision => c"reference_collision",
        S360Status::Dataset => c"dataset",
        S360Status::Panic => c"panic",
        S360Status::Other => c"other",
    };
    s.as_ptr()
}
