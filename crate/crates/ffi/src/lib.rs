//! C ABI for the simcal calibration toolkit.
//!
//! Exposes the pieces other languages most often want to drive directly:
//! the photovoltaic surrogate, maximin Latin hypercube sampling, and a
//! trained Gaussian-process surrogate behind an opaque handle.
//!
//! Conventions: every fallible function returns a [`SimcalStatus`]; on any
//! non-OK status the thread-local message retrieved by
//! [`simcal_last_error`] describes the failure. Matrices cross the
//! boundary as row-major buffers. Handles are freed exactly once with
//! their `_free` function; passing them to any call after that is
//! undefined behavior.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;

use simcal::design::maximin_lhs;
use simcal::estimators::gp_cv_q2;
use simcal::gp::{fit_hyperparameters, BasisSpec, GpModel};
use simcal::kernel::KernelFamily;
use simcal::testbed::{pv_power, PvSurrogateConfig};

/// Bumped on any change that breaks existing callers.
pub const SIMCAL_ABI_VERSION: u32 = 1;

/// Outcome of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimcalStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument violated a documented precondition.
    InvalidArgument = 2,
    /// A numerical routine failed to produce a usable result.
    Numerical = 3,
    /// Any other failure, including a caught panic.
    Failed = 4,
}

/// Correlation kernel selector for [`simcal_gp_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimcalKernel {
    /// Matern with smoothness 5/2.
    Matern52 = 0,
    /// Squared-exponential.
    SqExp = 1,
}

/// A trained Gaussian-process surrogate. Opaque; create with
/// [`simcal_gp_fit`], destroy with [`simcal_gp_free`].
pub struct SimcalGp {
    model: GpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(message: &str) {
    LAST_ERROR.with(|slot| {
        let mut bytes = message.as_bytes().to_vec();
        bytes.push(0);
        *slot.borrow_mut() = bytes;
    });
}

fn fail(status: SimcalStatus, message: &str) -> SimcalStatus {
    set_error(message);
    status
}

fn from_error(e: &simcal::CalError) -> SimcalStatus {
    match e {
        simcal::CalError::InvalidArgument(_) => SimcalStatus::InvalidArgument,
        simcal::CalError::Numerical(_) => SimcalStatus::Numerical,
        _ => SimcalStatus::Failed,
    }
}

/// Runs `f` with panics converted to [`SimcalStatus::Failed`].
fn guarded(f: impl FnOnce() -> SimcalStatus) -> SimcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(SimcalStatus::Failed, "internal panic"),
    }
}

/// ABI version of this library; compare against the header's constant
/// before making any other call.
#[no_mangle]
pub extern "C" fn simcal_abi_version() -> u32 {
    SIMCAL_ABI_VERSION
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length including the NUL; 0 means no error has been recorded. `buf`
/// may be null when `len` is 0, for sizing the buffer first.
#[no_mangle]
pub unsafe extern "C" fn simcal_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let bytes = slot.borrow();
        if bytes.is_empty() {
            return 0;
        }
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            // Keep the copy terminated even when truncated.
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Power output (W) of the built-in photovoltaic plant model with its
/// default configuration. `x` is either 6 inputs
/// `(t, latitude, longitude, I_g, I_d, T_e)` or 4 inputs
/// `(t, I_g, I_d, T_e)` using the default site; `theta` carries 3
/// parameters `(eta, mu_t, a_r)` or all 6 `(.., n_t, a_l, n_inc)`.
#[no_mangle]
pub unsafe extern "C" fn simcal_pv_power(
    x: *const f64,
    x_len: usize,
    theta: *const f64,
    theta_len: usize,
    out: *mut f64,
) -> SimcalStatus {
    guarded(|| {
        let (Some(x), Some(theta)) = (slice_arg(x, x_len), slice_arg(theta, theta_len)) else {
            return fail(SimcalStatus::NullPointer, "x and theta must be non-null");
        };
        if out.is_null() {
            return fail(SimcalStatus::NullPointer, "out must be non-null");
        }
        match pv_power(x, theta, &PvSurrogateConfig::default()) {
            Ok(p) => {
                *out = p;
                SimcalStatus::Ok
            }
            Err(e) => fail(from_error(&e), &e.to_string()),
        }
    })
}

/// Fills `out` (row-major, `n * dim`) with a maximin Latin hypercube
/// sample of `n` points on the unit cube, the best of `n_candidates`
/// seeded candidates by smallest pairwise distance.
#[no_mangle]
pub unsafe extern "C" fn simcal_maximin_lhs(
    n: usize,
    dim: usize,
    seed: u64,
    n_candidates: usize,
    out: *mut f64,
) -> SimcalStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SimcalStatus::NullPointer, "out must be non-null");
        }
        match maximin_lhs(n, dim, seed, n_candidates) {
            Ok(points) => {
                let flat = std::slice::from_raw_parts_mut(out, n * dim);
                for (i, point) in points.iter().enumerate() {
                    flat[i * dim..(i + 1) * dim].copy_from_slice(point);
                }
                SimcalStatus::Ok
            }
            Err(e) => fail(from_error(&e), &e.to_string()),
        }
    })
}

/// Fits a Gaussian-process surrogate to `n` points of dimension `dim`
/// (row-major `points`, outputs `y`) by maximum likelihood with
/// `n_restarts` seeded searches. `linear_trend` selects an affine mean
/// in place of a constant. On success stores a handle in `*out`.
#[no_mangle]
pub unsafe extern "C" fn simcal_gp_fit(
    points: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    kernel: SimcalKernel,
    linear_trend: bool,
    n_restarts: usize,
    seed: u64,
    out: *mut *mut SimcalGp,
) -> SimcalStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SimcalStatus::NullPointer, "out must be non-null");
        }
        let (Some(flat), Some(y)) = (slice_arg(points, n * dim), slice_arg(y, n)) else {
            return fail(SimcalStatus::NullPointer, "points and y must be non-null");
        };
        let design: Vec<Vec<f64>> = (0..n).map(|i| flat[i * dim..(i + 1) * dim].to_vec()).collect();
        let outputs = DVector::from_column_slice(y);
        let basis = if linear_trend {
            BasisSpec::Linear
        } else {
            BasisSpec::Constant
        };
        let family = match kernel {
            SimcalKernel::Matern52 => KernelFamily::Matern52,
            SimcalKernel::SqExp => KernelFamily::SqExp,
        };
        match fit_hyperparameters(&design, &outputs, basis, family, n_restarts, seed) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SimcalGp { model }));
                SimcalStatus::Ok
            }
            Err(e) => fail(from_error(&e), &e.to_string()),
        }
    })
}

/// Predicts at `n` query points of the model's input dimension
/// (row-major `points`): posterior means into `mean_out`, and posterior
/// variances into `var_out` unless it is null.
#[no_mangle]
pub unsafe extern "C" fn simcal_gp_predict(
    gp: *const SimcalGp,
    points: *const f64,
    n: usize,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> SimcalStatus {
    guarded(|| {
        let Some(gp) = gp.as_ref() else {
            return fail(SimcalStatus::NullPointer, "gp must be non-null");
        };
        if mean_out.is_null() {
            return fail(SimcalStatus::NullPointer, "mean_out must be non-null");
        }
        let dim = gp.model.input_dim();
        let Some(flat) = slice_arg(points, n * dim) else {
            return fail(SimcalStatus::NullPointer, "points must be non-null");
        };
        if n == 0 {
            return fail(SimcalStatus::InvalidArgument, "need at least one query");
        }
        let queries: Vec<Vec<f64>> = (0..n).map(|i| flat[i * dim..(i + 1) * dim].to_vec()).collect();
        if var_out.is_null() {
            let mu = gp.model.posterior_mean(&queries);
            std::ptr::copy_nonoverlapping(mu.as_slice().as_ptr(), mean_out, n);
        } else {
            let (mu, var) = gp.model.posterior_mean_and_var(&queries);
            std::ptr::copy_nonoverlapping(mu.as_slice().as_ptr(), mean_out, n);
            std::ptr::copy_nonoverlapping(var.as_slice().as_ptr(), var_out, n);
        }
        SimcalStatus::Ok
    })
}

/// Cross-validation predictivity of the fitted model over its own
/// training set, written to `*out`. 1 is a perfect emulator; values
/// at or below 0 mean it predicts no better than the output mean.
#[no_mangle]
pub unsafe extern "C" fn simcal_gp_q2(
    gp: *const SimcalGp,
    folds: usize,
    out: *mut f64,
) -> SimcalStatus {
    guarded(|| {
        let Some(gp) = gp.as_ref() else {
            return fail(SimcalStatus::NullPointer, "gp must be non-null");
        };
        if out.is_null() {
            return fail(SimcalStatus::NullPointer, "out must be non-null");
        }
        match gp_cv_q2(&gp.model, folds) {
            Ok(q2) => {
                *out = q2;
                SimcalStatus::Ok
            }
            Err(e) => fail(from_error(&e), &e.to_string()),
        }
    })
}

/// Releases a handle returned by [`simcal_gp_fit`]. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn simcal_gp_free(gp: *mut SimcalGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error_string() -> String {
        let mut buf = vec![0i8; 256];
        let n = unsafe { simcal_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
        let bytes: Vec<u8> = buf[..n.min(buf.len()) - 1].iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn abi_version_is_stable() {
        assert_eq!(simcal_abi_version(), 1);
    }

    #[test]
    fn pv_power_matches_the_library() {
        let x = [9_027_600.0, 50.0, 5.0, 800.0, 200.0, 25.0];
        let theta = [0.143, -0.4, 0.17];
        let mut out = 0.0;
        let status = unsafe {
            simcal_pv_power(x.as_ptr(), x.len(), theta.as_ptr(), theta.len(), &mut out)
        };
        assert_eq!(status, SimcalStatus::Ok);
        let expected = pv_power(&x, &theta, &PvSurrogateConfig::default()).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn pv_power_rejects_bad_arguments_with_a_message() {
        let x = [0.0; 5];
        let theta = [0.143, -0.4, 0.17];
        let mut out = 0.0;
        let status = unsafe {
            simcal_pv_power(x.as_ptr(), x.len(), theta.as_ptr(), theta.len(), &mut out)
        };
        assert_eq!(status, SimcalStatus::InvalidArgument);
        assert!(!last_error_string().is_empty());

        let status =
            unsafe { simcal_pv_power(std::ptr::null(), 3, theta.as_ptr(), 3, &mut out) };
        assert_eq!(status, SimcalStatus::NullPointer);
    }

    #[test]
    fn lhs_fills_the_unit_cube() {
        let (n, dim) = (10, 3);
        let mut out = vec![f64::NAN; n * dim];
        let status = unsafe { simcal_maximin_lhs(n, dim, 7, 16, out.as_mut_ptr()) };
        assert_eq!(status, SimcalStatus::Ok);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        // One point per stratum along each axis.
        for j in 0..dim {
            let mut strata: Vec<usize> = (0..n)
                .map(|i| (out[i * dim + j] * n as f64).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gp_round_trip_fit_predict_q2() {
        // y = sin(2 pi x) on 12 points; the surrogate should interpolate.
        let n = 12;
        let points: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = points
            .iter()
            .map(|x| (2.0 * std::f64::consts::PI * x).sin())
            .collect();

        let mut gp: *mut SimcalGp = std::ptr::null_mut();
        let status = unsafe {
            simcal_gp_fit(
                points.as_ptr(),
                n,
                1,
                y.as_ptr(),
                SimcalKernel::Matern52,
                false,
                4,
                11,
                &mut gp,
            )
        };
        assert_eq!(status, SimcalStatus::Ok);
        assert!(!gp.is_null());

        let queries = [0.125, 0.375, 0.625];
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        let status = unsafe {
            simcal_gp_predict(gp, queries.as_ptr(), 3, mean.as_mut_ptr(), var.as_mut_ptr())
        };
        assert_eq!(status, SimcalStatus::Ok);
        for (q, m) in queries.iter().zip(&mean) {
            let truth = (2.0 * std::f64::consts::PI * q).sin();
            assert!((truth - m).abs() < 0.05, "query {q}: {m} vs {truth}");
        }
        assert!(var.iter().all(|v| *v >= 0.0));

        let mut q2 = 0.0;
        let status = unsafe { simcal_gp_q2(gp, 4, &mut q2) };
        assert_eq!(status, SimcalStatus::Ok);
        assert!(q2 > 0.8, "q2 = {q2}");

        unsafe { simcal_gp_free(gp) };
    }

    #[test]
    fn gp_fit_reports_undersized_designs() {
        // Two points cannot support a trend plus covariance estimate.
        let points = [0.2, 0.8];
        let y = [1.0, 2.0];
        let mut gp: *mut SimcalGp = std::ptr::null_mut();
        let status = unsafe {
            simcal_gp_fit(
                points.as_ptr(),
                2,
                1,
                y.as_ptr(),
                SimcalKernel::SqExp,
                false,
                2,
                3,
                &mut gp,
            )
        };
        assert_eq!(status, SimcalStatus::InvalidArgument);
        assert!(gp.is_null());
        assert!(!last_error_string().is_empty());
    }
}
