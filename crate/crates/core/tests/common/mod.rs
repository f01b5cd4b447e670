//! Reference computations for the integration suites, written out the slow
//! textbook way on purpose: explicit inverses and determinants instead of
//! factorizations, correlation functions and trend bases restated from
//! scratch. Library results are checked against these independently coded
//! paths and should differ only by round-off.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use simcal::kernel::KernelFamily;

/// Euclidean distance between two points.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Correlation at distance `h` for range `psi`, restated directly:
/// Matern-5/2 is `(1 + u + u^2/3) exp(-u)` with `u = sqrt(5) h / psi`,
/// squared-exponential is `exp(-(h/psi)^2 / 2)`.
pub fn corr_ref(family: KernelFamily, h: f64, psi: f64) -> f64 {
    match family {
        KernelFamily::Matern52 => {
            let u = 5f64.sqrt() * h / psi;
            (1.0 + u + u * u / 3.0) * (-u).exp()
        }
        KernelFamily::SqExp => {
            let r = h / psi;
            (-0.5 * r * r).exp()
        }
    }
}

/// Correlation matrix of one point set.
pub fn corr_matrix_ref(pts: &[Vec<f64>], family: KernelFamily, psi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| {
        corr_ref(family, euclid(&pts[i], &pts[j]), psi)
    })
}

/// Cross-correlation matrix between two point sets.
pub fn cross_corr_ref(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    family: KernelFamily,
    psi: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        corr_ref(family, euclid(&a[i], &b[j]), psi)
    })
}

/// Trend matrix: a column of ones, then the coordinates when `linear`.
pub fn trend_matrix_ref(points: &[Vec<f64>], linear: bool) -> DMatrix<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    let cols = if linear { 1 + dim } else { 1 };
    DMatrix::from_fn(points.len(), cols, |i, j| {
        if j == 0 {
            1.0
        } else {
            points[i][j - 1]
        }
    })
}

/// Multivariate normal log density via explicit inverse and determinant.
pub fn mvn_logpdf_ref(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let inv = cov
        .clone()
        .try_inverse()
        .expect("reference covariance must be invertible");
    let det = cov.determinant();
    assert!(det > 0.0, "reference covariance must have positive determinant");
    let r = y - mean;
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Conditional of the tail block of a joint Gaussian given the head block.
pub struct RefConditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Partitioned-Gaussian conditioning by explicit inverse: with the first
/// `y_obs.len()` coordinates observed, the remainder has mean
/// `mu_q + S_qo S_oo^-1 (y - mu_o)` and covariance
/// `S_qq - S_qo S_oo^-1 S_oq`.
pub fn condition_tail_on_head(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y_obs: &DVector<f64>,
) -> RefConditional {
    let n_o = y_obs.len();
    let n_q = mean.len() - n_o;
    let s_oo = cov.view((0, 0), (n_o, n_o)).into_owned();
    let s_qo = cov.view((n_o, 0), (n_q, n_o)).into_owned();
    let s_qq = cov.view((n_o, n_o), (n_q, n_q)).into_owned();
    let inv = s_oo
        .try_inverse()
        .expect("observed block must be invertible");
    let resid = y_obs - mean.rows(0, n_o);
    RefConditional {
        mean: mean.rows(n_o, n_q) + &s_qo * &inv * resid,
        cov: s_qq - &s_qo * &inv * s_qo.transpose(),
    }
}

/// Sup-norm difference relative to the reference's sup norm.
pub fn rel_err_vec(got: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (got - reference).amax() / reference.amax().max(f64::MIN_POSITIVE)
}

/// Sup-norm difference relative to the reference's sup norm.
pub fn rel_err_mat(got: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (got - reference).amax() / reference.amax().max(f64::MIN_POSITIVE)
}

/// Batch-means Monte-Carlo standard error of the series mean, with
/// sqrt(n) batches (restated here rather than taken from the library).
pub fn batch_se(series: &[f64]) -> f64 {
    let n = series.len();
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    assert!(nb >= 2, "series too short for batch means");
    let means: Vec<f64> = (0..nb)
        .map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

/// Sample mean.
pub fn mean_of(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Sample standard deviation (denominator n-1).
pub fn sd_of(series: &[f64]) -> f64 {
    let m = mean_of(series);
    (series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (series.len() - 1) as f64).sqrt()
}

/// Median (of a copy; does not require sorted input).
pub fn median_of(series: &[f64]) -> f64 {
    let mut s = series.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Prints the per-criterion verdict line and fails the test on FAIL.
pub fn criterion(idx: usize, label: &str, started: std::time::Instant, ok: bool, detail: &str) {
    let secs = started.elapsed().as_secs_f64();
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {idx:02} {label}: {verdict} ({secs:.1}s) {detail}");
    assert!(ok, "criterion {idx:02} {label} failed: {detail}");
}
