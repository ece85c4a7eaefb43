//! C interface to fracnet: payoff evaluation and time-net construction
//! through opaque handles.
//!
//! Every function returns a [`FracnetStatus`]; on failure the message is
//! kept per thread and can be read with [`fracnet_last_error_message`].
//! Rust panics never cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fracnet::{DiffusionModel, FracnetError, ModelKind, Payoff, TimeNet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracnetModel {
    Brownian = 0,
    Geometric = 1,
}

/// Opaque payoff handle.
pub struct FracnetPayoff {
    inner: Payoff,
}

/// Opaque time-net handle.
pub struct FracnetNet {
    inner: TimeNet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &FracnetError) -> FracnetStatus {
    match err {
        FracnetError::InvalidInput(_) | FracnetError::MissingKnot { .. } => {
            FracnetStatus::InvalidInput
        }
        FracnetError::Domain(_) => FracnetStatus::Domain,
        _ => FracnetStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), FracnetStatus>>(f: F) -> FracnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FracnetStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            FracnetStatus::Panic
        }
    }
}

fn fail(err: FracnetError) -> FracnetStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> FracnetStatus {
    set_error(format!("null pointer: {what}"));
    FracnetStatus::NullPointer
}

fn model_of(model: FracnetModel, dim: usize) -> Result<DiffusionModel, FracnetStatus> {
    let kind = match model {
        FracnetModel::Brownian => ModelKind::BrownianMotion,
        FracnetModel::Geometric => ModelKind::GeometricBrownianMotion,
    };
    DiffusionModel::new(kind, dim).map_err(fail)
}

/// Creates a catalog payoff (`identity`, `quadratic`, `call`, `binary`,
/// `log_quadratic`) of dimension `dim`. `strike` is used by `call` and
/// `binary`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fracnet_payoff_new(
    name: *const c_char,
    strike: f64,
    dim: usize,
    out: *mut *mut FracnetPayoff,
) -> FracnetStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| {
            set_error("payoff name is not UTF-8");
            FracnetStatus::InvalidInput
        })?;
        let mut params = BTreeMap::new();
        params.insert("strike".to_string(), strike);
        let inner = Payoff::from_name(name, &params, dim).map_err(fail)?;
        *out = Box::into_raw(Box::new(FracnetPayoff { inner }));
        Ok(())
    })
}

/// # Safety
/// `payoff` must come from [`fracnet_payoff_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fracnet_payoff_free(payoff: *mut FracnetPayoff) {
    if !payoff.is_null() {
        drop(Box::from_raw(payoff));
    }
}

/// `G(t, y) = E(g(Y_1) | Y_t = y)`.
///
/// # Safety
/// `payoff` must be live, `y` must point to `dim` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fracnet_conditional_expectation(
    payoff: *const FracnetPayoff,
    model: FracnetModel,
    t: f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> FracnetStatus {
    guard(|| {
        let payoff = payoff.as_ref().ok_or_else(|| null("payoff"))?;
        if y.is_null() {
            return Err(null("y"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let m = model_of(model, dim)?;
        let y = std::slice::from_raw_parts(y, dim);
        *out = payoff
            .inner
            .conditional_expectation(&m, t, y)
            .map_err(fail)?;
        Ok(())
    })
}

/// `H_G(t, y)`, the norm of the σ-weighted Hessian.
///
/// # Safety
/// Same contract as [`fracnet_conditional_expectation`].
#[no_mangle]
pub unsafe extern "C" fn fracnet_h_value(
    payoff: *const FracnetPayoff,
    model: FracnetModel,
    t: f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> FracnetStatus {
    guard(|| {
        let payoff = payoff.as_ref().ok_or_else(|| null("payoff"))?;
        if y.is_null() {
            return Err(null("y"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let m = model_of(model, dim)?;
        let y = std::slice::from_raw_parts(y, dim);
        *out = payoff.inner.h_value(&m, t, y).map_err(fail)?.value();
        Ok(())
    })
}

unsafe fn emit_net(
    net: Result<TimeNet, FracnetError>,
    out: *mut *mut FracnetNet,
) -> Result<(), FracnetStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    let inner = net.map_err(fail)?;
    *out = Box::into_raw(Box::new(FracnetNet { inner }));
    Ok(())
}

/// Knots `i/n`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_equidistant(
    n: usize,
    out: *mut *mut FracnetNet,
) -> FracnetStatus {
    guard(|| emit_net(TimeNet::equidistant(n), out))
}

/// Knots `1 - (1 - i/n)^{1/θ}`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_theta(
    n: usize,
    theta: f64,
    out: *mut *mut FracnetNet,
) -> FracnetStatus {
    guard(|| emit_net(TimeNet::theta_net(n, theta), out))
}

/// # Safety
/// `net` must come from a `fracnet_net_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_free(net: *mut FracnetNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of knots (steps + 1).
///
/// # Safety
/// `net` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_len(net: *const FracnetNet, out: *mut usize) -> FracnetStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = net.inner.knots().len();
        Ok(())
    })
}

/// Copies the knots into `buf`. Fails with `BufferTooSmall` (writing
/// nothing) when `cap` is below the knot count.
///
/// # Safety
/// `net` must be live and `buf` must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_knots(
    net: *const FracnetNet,
    buf: *mut f64,
    cap: usize,
) -> FracnetStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let knots = net.inner.knots();
        if cap < knots.len() {
            set_error(format!(
                "buffer holds {cap} values, net has {} knots",
                knots.len()
            ));
            return Err(FracnetStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(knots.as_ptr(), buf, knots.len());
        Ok(())
    })
}

/// `|τ|_θ = sup_i (t_i - t_{i-1}) / (1 - t_{i-1})^{1-θ}`.
///
/// # Safety
/// `net` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fracnet_net_mesh_theta(
    net: *const FracnetNet,
    theta: f64,
    out: *mut f64,
) -> FracnetStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(theta > 0.0 && theta <= 1.0) {
            set_error(format!("theta must lie in (0, 1], got {theta}"));
            return Err(FracnetStatus::InvalidInput);
        }
        *out = net.inner.mesh_theta(theta);
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to fit, into `buf`. Returns the full message length in bytes
/// (without the terminator).
///
/// # Safety
/// `buf` must have room for `cap` bytes, or be null with `cap = 0`.
#[no_mangle]
pub unsafe extern "C" fn fracnet_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fracnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
