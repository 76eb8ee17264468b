//! C ABI over `mor-core`. Handles are opaque and owned by the caller, who
//! releases them with the matching `_free`. Matrices cross the boundary as
//! column-major `double` arrays. Every call returns a [`MorStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`mor_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mor_core::fmap::{self, WeightFilter};
use mor_core::linalg::Mat;
use mor_core::lti::StateSpace;
use mor_core::reduce::{self, NowiConfig, ReducedModel};
use mor_core::MorError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorMatrix {
    A = 0,
    B = 1,
    C = 2,
    D = 3,
}

pub struct MorSystem(StateSpace);
pub struct MorWeight(WeightFilter);
pub struct MorModel(ReducedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &MorError) -> MorStatus {
    match e.exit_code() {
        2 => MorStatus::Usage,
        3 => MorStatus::Data,
        _ => MorStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (MorStatus, String)>>(f: F) -> MorStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MorStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MorStatus::Panic
        }
    }
}

fn lift<T>(r: mor_core::Result<T>) -> Result<T, (MorStatus, String)> {
    r.map_err(|e| (status_of(&e), format!("{}: {e}", e.kind())))
}

fn null(what: &str) -> (MorStatus, String) {
    (MorStatus::NullPointer, format!("{what} is null"))
}

unsafe fn matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Mat, (MorStatus, String)> {
    if rows * cols == 0 {
        return Ok(Mat::zeros(rows, cols));
    }
    if data.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(data, rows * cols);
    Ok(Mat::from_column_slice(rows, cols, s))
}

unsafe fn optional(data: *const f64, rows: usize, cols: usize) -> Mat {
    if data.is_null() || rows * cols == 0 {
        Mat::zeros(rows, cols)
    } else {
        Mat::from_column_slice(rows, cols, std::slice::from_raw_parts(data, rows * cols))
    }
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), (MorStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put<T: Copy>(out: *mut T, v: T) -> Result<(), (MorStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = v;
    Ok(())
}

unsafe fn get<'a, T>(h: *const T, what: &str) -> Result<&'a T, (MorStatus, String)> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn mor_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// System of order `n` with `m` inputs and `p` outputs. `d` may be null
/// (zero feedthrough).
///
/// # Safety
/// Non-null arrays must hold `n*n`, `n*m`, `p*n` and `p*m` doubles.
#[no_mangle]
pub unsafe extern "C" fn mor_system_new(
    n: usize,
    m: usize,
    p: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    d: *const f64,
    out: *mut *mut MorSystem,
) -> MorStatus {
    guard(|| {
        let sys = lift(StateSpace::new(
            matrix(a, n, n, "a")?,
            matrix(b, n, m, "b")?,
            matrix(c, p, n, "c")?,
            optional(d, p, m),
        ))?;
        emit(out, MorSystem(sys))
    })
}

/// # Safety
/// `sys` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mor_system_free(sys: *mut MorSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Writes `(order, inputs, outputs)`.
///
/// # Safety
/// `sys` must be a live handle; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn mor_system_dims(
    sys: *const MorSystem,
    order: *mut usize,
    inputs: *mut usize,
    outputs: *mut usize,
) -> MorStatus {
    guard(|| {
        let s = &get(sys, "system")?.0;
        put(order, s.order())?;
        put(inputs, s.inputs())?;
        put(outputs, s.outputs())
    })
}

/// Copies one realization matrix, column-major, into `buf` of length `len`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mor_system_matrix(
    sys: *const MorSystem,
    which: MorMatrix,
    buf: *mut f64,
    len: usize,
) -> MorStatus {
    guard(|| {
        let s = &get(sys, "system")?.0;
        let m = match which {
            MorMatrix::A => s.a(),
            MorMatrix::B => s.b(),
            MorMatrix::C => s.c(),
            MorMatrix::D => s.d(),
        };
        if len != m.len() {
            return Err((MorStatus::Usage, format!("buffer holds {len} values, matrix has {}", m.len())));
        }
        if len > 0 {
            if buf.is_null() {
                return Err(null("buffer"));
            }
            std::slice::from_raw_parts_mut(buf, len).copy_from_slice(m.as_slice());
        }
        Ok(())
    })
}

/// Weight of order `n_w`, `m` outputs and `m_w` inputs. `d` may be null.
///
/// # Safety
/// Non-null arrays must hold `n_w*n_w`, `n_w*m_w`, `m*n_w`, `m*m_w` doubles.
#[no_mangle]
pub unsafe extern "C" fn mor_weight_new(
    n_w: usize,
    m: usize,
    m_w: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    d: *const f64,
    out: *mut *mut MorWeight,
) -> MorStatus {
    guard(|| {
        let w = lift(WeightFilter::new(
            matrix(a, n_w, n_w, "a")?,
            matrix(b, n_w, m_w, "b")?,
            matrix(c, m, n_w, "c")?,
            optional(d, m, m_w),
        ))?;
        emit(out, MorWeight(w))
    })
}

/// Identity weight on `m` channels.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mor_weight_identity(m: usize, out: *mut *mut MorWeight) -> MorStatus {
    guard(|| emit(out, MorWeight(WeightFilter::identity(m))))
}

/// # Safety
/// `w` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mor_weight_free(w: *mut MorWeight) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Weighted H2 norm of `g - g_r`.
///
/// # Safety
/// Handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mor_weighted_error_norm(
    g: *const MorSystem,
    g_r: *const MorSystem,
    w: *const MorWeight,
    out: *mut f64,
) -> MorStatus {
    guard(|| {
        let v = lift(fmap::weighted_error_norm(
            &get(g, "g")?.0,
            &get(g_r, "g_r")?.0,
            &get(w, "weight")?.0,
        ))?;
        put(out, v)
    })
}

/// Weighted H2 inner product.
///
/// # Safety
/// Handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mor_weighted_inner(
    g: *const MorSystem,
    h: *const MorSystem,
    w: *const MorWeight,
    out: *mut f64,
) -> MorStatus {
    guard(|| {
        let v = lift(fmap::weighted_h2_inner(&get(g, "g")?.0, &get(h, "h")?.0, &get(w, "weight")?.0))?;
        put(out, v)
    })
}

/// NOWI reduction. `exactness`: negative for automatic, 0 off, positive on.
///
/// # Safety
/// Handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mor_nowi(
    g: *const MorSystem,
    w: *const MorWeight,
    order: usize,
    tol: f64,
    max_iter: usize,
    exactness: i32,
    out: *mut *mut MorModel,
) -> MorStatus {
    guard(|| {
        let mut cfg = NowiConfig::new(order);
        cfg.tol = tol;
        cfg.max_iter = max_iter;
        cfg.exactness = match exactness {
            e if e < 0 => None,
            0 => Some(false),
            _ => Some(true),
        };
        let model = lift(reduce::nowi(&get(g, "g")?.0, &get(w, "weight")?.0, &cfg, None))?;
        emit(out, MorModel(model))
    })
}

/// Frequency-weighted balanced truncation.
///
/// # Safety
/// Handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mor_fwbt(
    g: *const MorSystem,
    w: *const MorWeight,
    order: usize,
    out: *mut *mut MorModel,
) -> MorStatus {
    guard(|| {
        let model = lift(reduce::fwbt(&get(g, "g")?.0, &get(w, "weight")?.0, order))?;
        emit(out, MorModel(model))
    })
}

/// New system handle holding a copy of the reduced realization.
///
/// # Safety
/// `model` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mor_model_system(model: *const MorModel, out: *mut *mut MorSystem) -> MorStatus {
    guard(|| {
        let s = get(model, "model")?.0.system.clone();
        emit(out, MorSystem(s))
    })
}

/// Writes iteration count and convergence (1 or 0).
///
/// # Safety
/// `model` must be live; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn mor_model_info(
    model: *const MorModel,
    iterations: *mut usize,
    converged: *mut i32,
) -> MorStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        put(iterations, m.iterations)?;
        put(converged, m.converged as i32)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mor_model_free(model: *mut MorModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
