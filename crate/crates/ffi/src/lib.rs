//! C interface to `pnr-core`.
//!
//! Fields are exposed as opaque `PnrField` handles owned by the caller and
//! released with `pnr_field_free`. Every fallible function returns a
//! `PnrStatus`; on failure the message is available from
//! `pnr_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pnr_core::checkpoint::{load_checkpoint, save_checkpoint};
use pnr_core::field::{perturb, sample_init};
use pnr_core::probe::{determine_eta, loss_decrease};
use pnr_core::render::{orbit_cameras, render, CameraRing, RenderConfig};
use pnr_core::{Bbox, FieldParams, GridDims, InitDistribution, PnrError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque field handle.
pub struct PnrField(FieldParams);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &PnrError) -> PnrStatus {
    match err.exit_code() {
        3 => PnrStatus::Numerical,
        4 => PnrStatus::Io,
        _ => PnrStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PnrStatus>) -> PnrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PnrStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside pnr".into());
            PnrStatus::Panic
        }
    }
}

fn fail(err: PnrError) -> PnrStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> PnrStatus {
    set_error(format!("{what} is null"));
    PnrStatus::NullPointer
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, PnrStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not valid UTF-8".into());
        PnrStatus::InvalidArgument
    })
}

unsafe fn field_arg<'a>(f: *const PnrField) -> Result<&'a FieldParams, PnrStatus> {
    f.as_ref().map(|f| &f.0).ok_or_else(|| null("field"))
}

unsafe fn emit(out: *mut *mut PnrField, field: FieldParams) -> Result<(), PnrStatus> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(PnrField(field)));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pnr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Field on the `[-1, 1]^3` box with every raw density set to `density` and
/// every raw color channel to `color`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_new_filled(
    nx: usize,
    ny: usize,
    nz: usize,
    density: f64,
    color: f64,
    out: *mut *mut PnrField,
) -> PnrStatus {
    guard(|| {
        let dims = GridDims::new(nx, ny, nz).map_err(fail)?;
        emit(out, FieldParams::filled(dims, Bbox::default(), density, color))
    })
}

/// Random field drawn from the default initialization distribution.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_sample_init(
    nx: usize,
    ny: usize,
    nz: usize,
    seed: u64,
    out: *mut *mut PnrField,
) -> PnrStatus {
    guard(|| {
        let dims = GridDims::new(nx, ny, nz).map_err(fail)?;
        let field = sample_init(&InitDistribution::default(), dims, Bbox::default(), seed).map_err(fail)?;
        emit(out, field)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_load(path: *const c_char, out: *mut *mut PnrField) -> PnrStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, load_checkpoint(path).map_err(fail)?)
    })
}

/// # Safety
/// `field` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_save(field: *const PnrField, path: *const c_char) -> PnrStatus {
    guard(|| {
        let field = field_arg(field)?;
        let path = path_arg(path)?;
        save_checkpoint(field, path).map_err(fail)
    })
}

/// # Safety
/// `field` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_free(field: *mut PnrField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of raw parameters (four per voxel), or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_param_count(field: *const PnrField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// Copies the raw parameters (densities, then interleaved RGB) into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_get_params(field: *const PnrField, buf: *mut f64, len: usize) -> PnrStatus {
    guard(|| {
        let field = field_arg(field)?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len != field.len() {
            return Err(fail(PnrError::Dimension(format!(
                "buffer holds {len}, field has {}",
                field.len()
            ))));
        }
        ptr::copy_nonoverlapping(field.raw().as_ptr(), buf, len);
        Ok(())
    })
}

/// Overwrites the raw parameters from `buf`. Rejects non-finite values.
///
/// # Safety
/// `buf` must be valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_set_params(field: *mut PnrField, buf: *const f64, len: usize) -> PnrStatus {
    guard(|| {
        let field = field.as_mut().map(|f| &mut f.0).ok_or_else(|| null("field"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len != field.len() {
            return Err(fail(PnrError::Dimension(format!(
                "buffer holds {len}, field has {}",
                field.len()
            ))));
        }
        let src = std::slice::from_raw_parts(buf, len);
        if src.iter().any(|v| !v.is_finite()) {
            return Err(fail(PnrError::Numerical("non-finite parameter".into())));
        }
        field.raw_mut().copy_from_slice(src);
        Ok(())
    })
}

/// `(1 - eta) * field + eta * init` with a fresh initialization drawn from
/// `seed`.
///
/// # Safety
/// `field` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pnr_field_perturb(
    field: *const PnrField,
    eta: f64,
    seed: u64,
    out: *mut *mut PnrField,
) -> PnrStatus {
    guard(|| {
        let field = field_arg(field)?;
        let p = perturb(field, &InitDistribution::default(), eta, seed).map_err(fail)?;
        emit(out, p)
    })
}

/// Renders view `view` of an evenly spaced `view_count`-camera orbit with the
/// default ring geometry and render settings. Writes `3 * width * height`
/// interleaved RGB values, row-major, into `rgb`.
///
/// # Safety
/// `rgb` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pnr_render_orbit_view(
    field: *const PnrField,
    view: usize,
    view_count: usize,
    width: usize,
    height: usize,
    rgb: *mut f64,
    len: usize,
) -> PnrStatus {
    guard(|| {
        let field = field_arg(field)?;
        if rgb.is_null() {
            return Err(null("image buffer"));
        }
        if view >= view_count {
            return Err(fail(PnrError::Config(format!("view {view} out of {view_count}"))));
        }
        let need = 3 * width * height;
        if len != need {
            return Err(fail(PnrError::Dimension(format!(
                "buffer holds {len}, image needs {need}"
            ))));
        }
        let ring = CameraRing {
            count: view_count,
            width,
            height,
            ..CameraRing::default()
        };
        let cams = orbit_cameras(&ring, field.bbox().center()).map_err(fail)?;
        let img = render(field, &cams[view], &RenderConfig::default()).map_err(fail)?;
        ptr::copy_nonoverlapping(img.data().as_ptr(), rgb, need);
        Ok(())
    })
}

/// Mean of the last `window` losses minus the mean of the first `window`.
///
/// # Safety
/// `losses` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pnr_loss_decrease(losses: *const f64, len: usize, window: usize, out: *mut f64) -> PnrStatus {
    guard(|| {
        if losses.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let history = std::slice::from_raw_parts(losses, len);
        *out = loss_decrease(history, window).map_err(fail)?;
        Ok(())
    })
}

/// Perturbation amount for a probe loss decrease.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pnr_determine_eta(delta_l: f64, delta_min: f64, eta_max: f64, out: *mut f64) -> PnrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output"));
        }
        *out = determine_eta(delta_l, delta_min, eta_max).map_err(fail)?;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pnr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
