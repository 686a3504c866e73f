//! C ABI over the device model and crossbar tile.
//!
//! Every call returns a [`VcmStatus`]; on failure the message is kept per
//! thread and can be fetched with [`vcm_last_error`]. Handles are opaque and
//! must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use vcm_sim::crossbar::{CrossbarTile, DeviceModel, PulseScheme};
use vcm_sim::fit::surrogate_current;
use vcm_sim::stochastic::NoiseSpec;
use vcm_sim::{Error, FitCoefficients, PhysicalParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    Numerical = 7,
    Panic = 99,
}

pub struct VcmModel {
    inner: Arc<DeviceModel>,
}

pub struct VcmTile {
    inner: CrossbarTile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> VcmStatus {
    match e {
        Error::InvalidArgument(_) => VcmStatus::InvalidArgument,
        Error::Dimension { .. } => VcmStatus::Dimension,
        Error::Io { .. } => VcmStatus::Io,
        Error::Parse { .. } | Error::Format { .. } => VcmStatus::Parse,
        Error::Config(_) => VcmStatus::Config,
        _ => VcmStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (VcmStatus, String)>>(f: F) -> VcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside vcm-sim");
            VcmStatus::Panic
        }
    }
}

fn lift(e: Error) -> (VcmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (VcmStatus, String) {
    (VcmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, (VcmStatus, String)> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| (VcmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vcm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn vcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a device model. Null paths select the bundled files. `noise` is a
/// preset name (null means "none"); a NaN `sigma` keeps the preset default.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out` must
/// be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_model_new(
    params_path: *const c_char,
    coeffs_path: *const c_char,
    scheme_path: *const c_char,
    noise: *const c_char,
    sigma: f64,
    seed: u64,
    out: *mut *mut VcmModel,
) -> VcmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let params = match opt_str(params_path, "params_path")? {
            Some(p) => PhysicalParams::load(Path::new(p)).map_err(lift)?,
            None => PhysicalParams::bundled(),
        };
        let coeffs = match opt_str(coeffs_path, "coeffs_path")? {
            Some(p) => FitCoefficients::load(Path::new(p)).map_err(lift)?,
            None => FitCoefficients::bundled(),
        };
        let scheme = match opt_str(scheme_path, "scheme_path")? {
            Some(p) => PulseScheme::load(Path::new(p)).map_err(lift)?,
            None => PulseScheme::bundled(),
        };
        let preset = opt_str(noise, "noise")?.unwrap_or("none");
        let sigma = if sigma.is_nan() { None } else { Some(sigma) };
        let noise = NoiseSpec::preset(preset, sigma, seed).map_err(lift)?;
        let model = DeviceModel::new(params, coeffs, noise, scheme).map_err(lift)?;
        *out = Box::into_raw(Box::new(VcmModel { inner: Arc::new(model) }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`vcm_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vcm_model_free(model: *mut VcmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Read conductance (S) of a nominal device at disc concentration `n_d` (1/m^3).
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_model_conductance(model: *const VcmModel, n_d: f64, out: *mut f64) -> VcmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.inner.conductance(n_d).map_err(lift)?;
        Ok(())
    })
}

/// Surrogate device current (A) at applied voltage `v_m` (V).
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_model_current(model: *const VcmModel, n_d: f64, v_m: f64, out: *mut f64) -> VcmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = surrogate_current(&m.inner.coeffs, &m.inner.params, n_d, v_m).map_err(lift)?;
        Ok(())
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (VcmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (VcmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<(), (VcmStatus, String)> {
    if got != expected {
        return Err((VcmStatus::Dimension, format!("{what}: expected {expected} values, got {got}")));
    }
    Ok(())
}

/// Programs a `rows` x `cols` tile to the row-major `weights`.
///
/// # Safety
/// `model` must be a live handle, `weights` must hold `rows * cols` values
/// and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_new(
    model: *const VcmModel,
    tile_id: u64,
    rows: usize,
    cols: usize,
    weights: *const f64,
    w_max: f64,
    out: *mut *mut VcmTile,
) -> VcmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = rows.checked_mul(cols).ok_or((VcmStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let w = ndarray::ArrayView2::from_shape((rows, cols), slice(weights, n, "weights")?)
            .map_err(|e| (VcmStatus::Dimension, e.to_string()))?;
        let tile = CrossbarTile::new(m.inner.clone(), tile_id, w, w_max).map_err(lift)?;
        *out = Box::into_raw(Box::new(VcmTile { inner: tile }));
        Ok(())
    })
}

/// # Safety
/// `tile` must be null or a handle from [`vcm_tile_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_free(tile: *mut VcmTile) {
    if !tile.is_null() {
        drop(Box::from_raw(tile));
    }
}

/// # Safety
/// `tile` must be a live handle; `rows` and `cols` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_shape(tile: *const VcmTile, rows: *mut usize, cols: *mut usize) -> VcmStatus {
    guard(|| {
        let t = tile.as_ref().ok_or_else(|| null("tile"))?;
        *rows.as_mut().ok_or_else(|| null("rows"))? = t.inner.rows();
        *cols.as_mut().ok_or_else(|| null("cols"))? = t.inner.cols();
        Ok(())
    })
}

/// Reads every device and writes the weights row-major into `out`.
///
/// # Safety
/// `tile` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_read_weights(tile: *const VcmTile, out: *mut f64, len: usize) -> VcmStatus {
    guard(|| {
        let t = tile.as_ref().ok_or_else(|| null("tile"))?;
        check_len(len, t.inner.rows() * t.inner.cols(), "out")?;
        let w = t.inner.read_weights().map_err(lift)?;
        slice_mut(out, len, "out")?.iter_mut().zip(w.iter()).for_each(|(o, v)| *o = *v);
        Ok(())
    })
}

/// y = W x.
///
/// # Safety
/// `x` must hold `x_len` values and `y` `y_len` values.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_forward(tile: *const VcmTile, x: *const f64, x_len: usize, y: *mut f64, y_len: usize) -> VcmStatus {
    guard(|| {
        let t = tile.as_ref().ok_or_else(|| null("tile"))?;
        check_len(y_len, t.inner.rows(), "y")?;
        let x = ndarray::ArrayView1::from(slice(x, x_len, "x")?);
        let r = t.inner.forward(x).map_err(lift)?;
        slice_mut(y, y_len, "y")?.copy_from_slice(r.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Applies a row-major weight change with pulsed updates. Pulse counts are
/// written to `applied` and `skipped` when they are non-null.
///
/// # Safety
/// `tile` must be a live handle and `delta_w` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_update(
    tile: *mut VcmTile,
    delta_w: *const f64,
    len: usize,
    applied: *mut u64,
    skipped: *mut u64,
) -> VcmStatus {
    guard(|| {
        let t = tile.as_mut().ok_or_else(|| null("tile"))?;
        let (r, c) = (t.inner.rows(), t.inner.cols());
        check_len(len, r * c, "delta_w")?;
        let dw = ndarray::ArrayView2::from_shape((r, c), slice(delta_w, len, "delta_w")?)
            .map_err(|e| (VcmStatus::Dimension, e.to_string()))?;
        let stats = t.inner.pulsed_update(dw).map_err(lift)?;
        if let Some(a) = applied.as_mut() {
            *a = stats.applied;
        }
        if let Some(s) = skipped.as_mut() {
            *s = stats.skipped;
        }
        Ok(())
    })
}

/// Number of devices currently outside their conductance bounds.
///
/// # Safety
/// `tile` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vcm_tile_bound_violations(tile: *const VcmTile, out: *mut usize) -> VcmStatus {
    guard(|| {
        let t = tile.as_ref().ok_or_else(|| null("tile"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = t.inner.enforce_conductance_bounds().len();
        Ok(())
    })
}
