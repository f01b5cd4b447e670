//! Stationary correlation kernels over normalized inputs.
//!
//! Kernels are isotropic: they depend on inputs only through the Euclidean
//! distance `h` between points, with every coordinate normalized to [0, 1]
//! beforehand so one scalar range applies to all coordinates. A covariance
//! is always `variance * correlation` plus an optional diagonal nugget.

use nalgebra::DMatrix;

use crate::error::{CalError, Result};

/// Supported correlation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Matern with smoothness 5/2: twice-differentiable sample paths.
    Matern52,
    /// Squared-exponential (Gaussian): infinitely smooth sample paths.
    SqExp,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Matern52 => write!(f, "matern52"),
            KernelFamily::SqExp => write!(f, "sq_exp"),
        }
    }
}

/// A stationary kernel: family, range, marginal variance, and nugget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Correlation range psi, in normalized-input units. Positive.
    pub range: f64,
    /// Marginal variance sigma^2, in squared output units. Positive.
    pub variance: f64,
    /// Diagonal jitter added to a design covariance, in squared output
    /// units. Non-negative; keeps near-duplicate designs factorizable.
    pub nugget: f64,
}

/// Relative nugget applied by default: `DEFAULT_NUGGET_REL * variance`.
pub const DEFAULT_NUGGET_REL: f64 = 1e-8;

impl KernelSpec {
    /// Builds a spec with the default nugget `1e-8 * variance`.
    pub fn new(family: KernelFamily, range: f64, variance: f64) -> Result<Self> {
        Self::with_nugget(family, range, variance, DEFAULT_NUGGET_REL * variance)
    }

    /// Builds a spec with an explicit nugget (0 is allowed).
    pub fn with_nugget(family: KernelFamily, range: f64, variance: f64, nugget: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(CalError::invalid(format!("kernel range must be positive, got {range}")));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(CalError::invalid(format!(
                "kernel variance must be positive, got {variance}"
            )));
        }
        if !(nugget >= 0.0) || !nugget.is_finite() {
            return Err(CalError::invalid(format!(
                "kernel nugget must be non-negative, got {nugget}"
            )));
        }
        Ok(KernelSpec {
            family,
            range,
            variance,
            nugget,
        })
    }

    /// Correlation at distance `h` for this spec's family and range.
    pub fn correlation(&self, h: f64) -> f64 {
        kernel_correlation(self.family, h, self.range)
    }

    /// Covariance at distance `h`, without nugget.
    pub fn covariance(&self, h: f64) -> f64 {
        self.variance * self.correlation(h)
    }
}

/// Correlation between two points at Euclidean distance `h` under the given
/// family with range `psi`.
///
/// Debug-asserts `h >= 0` and `psi > 0`; both families return exactly 1 at
/// `h = 0` and decrease monotonically toward 0.
pub fn kernel_correlation(family: KernelFamily, h: f64, psi: f64) -> f64 {
    debug_assert!(h >= 0.0, "distance must be non-negative");
    debug_assert!(psi > 0.0, "range must be positive");
    match family {
        KernelFamily::Matern52 => {
            let u = 5.0_f64.sqrt() * h / psi;
            (1.0 + u + u * u / 3.0) * (-u).exp()
        }
        KernelFamily::SqExp => {
            let u = h / psi;
            (-0.5 * u * u).exp()
        }
    }
}

/// Euclidean distance between two equal-length coordinate slices.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "points must share dimension");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Correlation matrix of a point set: symmetric with unit diagonal.
///
/// The nugget is NOT applied here; covariance assembly adds
/// `variance * R + nugget * I` where factorization requires it.
pub fn correlation_matrix(points: &[Vec<f64>], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::from_element(n, n, 0.0);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = kernel.correlation(euclidean(&points[i], &points[j]));
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Cross-correlation matrix between two point sets (rows: `a`, cols: `b`).
pub fn cross_correlation(a: &[Vec<f64>], b: &[Vec<f64>], kernel: &KernelSpec) -> DMatrix<f64> {
    let mut r = DMatrix::from_element(a.len(), b.len(), 0.0);
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            r[(i, j)] = kernel.correlation(euclidean(p, q));
        }
    }
    r
}

/// Design covariance `variance * R + nugget * I`.
pub fn design_covariance(points: &[Vec<f64>], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = points.len();
    let mut c = correlation_matrix(points, kernel) * kernel.variance;
    for i in 0..n {
        c[(i, i)] += kernel.nugget;
    }
    c
}
