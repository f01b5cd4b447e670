//! Gaussian-process machinery: trend basis, conditioning, hyperparameter
//! fitting by maximum partial likelihood, and predictivity scoring.
//!
//! A model is `f(t) = h(t)' beta + Z(t)` with `Z` a zero-mean stationary GP.
//! All inputs are assumed normalized to [0, 1] per coordinate by the caller;
//! the design covariance is `sigma^2 R + nugget I` and is factorized once.
//! Conditioning follows the standard partitioned-Gaussian formulas: for a
//! joint Gaussian `(U1, U2)`, `U2 | U1` is Gaussian with mean
//! `mu2 + S21 S11^-1 (U1 - mu1)` and covariance `S22 - S21 S11^-1 S12`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CalError, Result};
use crate::kernel::{
    correlation_matrix, cross_correlation, design_covariance, KernelFamily, KernelSpec,
    DEFAULT_NUGGET_REL,
};
use crate::optim::{nelder_mead, NmOptions};

/// One scalar trend regressor evaluated on an input tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    /// The constant function 1.
    Constant,
    /// Coordinate `j` of the input tuple.
    Coordinate(usize),
}

impl Regressor {
    /// Evaluates the regressor at an input tuple.
    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            Regressor::Constant => 1.0,
            Regressor::Coordinate(j) => t[*j],
        }
    }

    /// Short display name used in reports.
    pub fn name(&self) -> String {
        match self {
            Regressor::Constant => "const".to_string(),
            Regressor::Coordinate(j) => format!("t{j}"),
        }
    }
}

/// Structural choice of trend basis, before coefficients are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// Intercept only.
    Constant,
    /// Intercept plus every input coordinate.
    Linear,
}

impl BasisSpec {
    /// Materializes the regressor list for inputs of dimension `dim`.
    pub fn regressors(&self, dim: usize) -> Vec<Regressor> {
        match self {
            BasisSpec::Constant => vec![Regressor::Constant],
            BasisSpec::Linear => {
                let mut r = vec![Regressor::Constant];
                r.extend((0..dim).map(Regressor::Coordinate));
                r
            }
        }
    }
}

/// A linear trend `h(t)' beta` with named regressors.
///
/// The first regressor is always the constant 1, and `coefficients` has one
/// entry per regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanBasis {
    regressors: Vec<Regressor>,
    coefficients: DVector<f64>,
}

impl MeanBasis {
    /// Builds a basis; rejects an empty or non-constant-led regressor list
    /// and a coefficient/regressor length mismatch.
    pub fn new(regressors: Vec<Regressor>, coefficients: DVector<f64>) -> Result<Self> {
        if regressors.first() != Some(&Regressor::Constant) {
            return Err(CalError::invalid(
                "mean basis must start with the constant regressor",
            ));
        }
        if regressors.len() != coefficients.len() {
            return Err(CalError::invalid(format!(
                "mean basis has {} regressors but {} coefficients",
                regressors.len(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(CalError::invalid("mean coefficients must be finite"));
        }
        Ok(MeanBasis {
            regressors,
            coefficients,
        })
    }

    /// Intercept-only basis with the given constant value.
    pub fn constant(value: f64) -> Self {
        MeanBasis::new(vec![Regressor::Constant], DVector::from_element(1, value)).unwrap()
    }

    pub fn regressors(&self) -> &[Regressor] {
        &self.regressors
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Evaluates the trend at one input tuple.
    pub fn value(&self, t: &[f64]) -> f64 {
        self.regressors
            .iter()
            .zip(self.coefficients.iter())
            .map(|(r, b)| r.eval(t) * b)
            .sum()
    }

    /// Regression matrix `H` with rows `h(t_i)'`.
    pub fn h_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        h_matrix(&self.regressors, points)
    }
}

/// Regression matrix for an explicit regressor list.
pub fn h_matrix(regressors: &[Regressor], points: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), regressors.len(), |i, j| {
        regressors[j].eval(&points[i])
    })
}

/// A GP conditioned on design runs, with the design covariance factorized
/// once and reused by every prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    mean: MeanBasis,
    kernel: KernelSpec,
    design: Vec<Vec<f64>>,
    outputs: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Cached `C^-1 (y - H beta)` driving every posterior mean.
    alpha: DVector<f64>,
    fit: Option<FitInfo>,
}

/// Diagnostics attached to a model produced by [`fit_hyperparameters`].
#[derive(Debug, Clone, Copy)]
pub struct FitInfo {
    /// Log partial likelihood achieved at the fitted parameters.
    pub log_likelihood: f64,
    /// Restarts attempted.
    pub restarts: usize,
    /// Index of the restart that produced the returned fit.
    pub chosen_restart: usize,
}

/// Posterior (conditional) distribution of a GP at a finite query set.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    /// Symmetric, PSD up to a small negative-eigenvalue tolerance.
    pub cov: DMatrix<f64>,
}

impl GpModel {
    /// Assembles a model and factorizes its design covariance.
    ///
    /// Fails if dimensions are inconsistent, outputs are non-finite, or the
    /// covariance is not positive definite. The cached factor is verified to
    /// reproduce the covariance to 1e-8 relative error.
    pub fn new(
        mean: MeanBasis,
        kernel: KernelSpec,
        design: Vec<Vec<f64>>,
        outputs: DVector<f64>,
    ) -> Result<Self> {
        if design.is_empty() {
            return Err(CalError::invalid("design must contain at least one point"));
        }
        if design.len() != outputs.len() {
            return Err(CalError::invalid(format!(
                "design has {} points but {} outputs",
                design.len(),
                outputs.len()
            )));
        }
        let dim = design[0].len();
        if design.iter().any(|p| p.len() != dim) {
            return Err(CalError::invalid("design points must share one dimension"));
        }
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(CalError::invalid("outputs must be finite"));
        }
        let cov = design_covariance(&design, &kernel);
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            CalError::numerical(
                "design covariance is not positive definite; increase the nugget or drop duplicate points",
            )
        })?;

        // The factor must reproduce the covariance it claims to represent.
        let recon = chol.l() * chol.l().transpose();
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let err = (&recon - &cov).amax() / scale;
        if err > 1e-8 {
            return Err(CalError::numerical(format!(
                "cholesky factor reproduces the design covariance to {err:.2e} relative error only"
            )));
        }

        let h = mean.h_matrix(&design);
        let resid = &outputs - h * mean.coefficients();
        let alpha = chol.solve(&resid);
        Ok(GpModel {
            mean,
            kernel,
            design,
            outputs,
            chol,
            alpha,
            fit: None,
        })
    }

    pub fn mean(&self) -> &MeanBasis {
        &self.mean
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn fit_info(&self) -> Option<&FitInfo> {
        self.fit.as_ref()
    }

    /// Input dimension of the design.
    pub fn input_dim(&self) -> usize {
        self.design[0].len()
    }

    /// Solves `C x = b` against the cached factor.
    pub fn solve_design_cov(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Posterior mean at queries: `h(t)' beta + k(t, D) alpha`.
    pub fn posterior_mean(&self, queries: &[Vec<f64>]) -> DVector<f64> {
        let h = self.mean.h_matrix(queries);
        let k_qd =
            cross_correlation(queries, &self.design, &self.kernel) * self.kernel.variance;
        h * self.mean.coefficients() + k_qd * &self.alpha
    }

    /// Posterior mean and marginal variance at queries (no cross terms).
    ///
    /// Variances are clamped at 0 to absorb factorization round-off.
    pub fn posterior_mean_and_var(&self, queries: &[Vec<f64>]) -> (DVector<f64>, DVector<f64>) {
        let mean = self.posterior_mean(queries);
        let k_dq = cross_correlation(&self.design, queries, &self.kernel)
            * self.kernel.variance;
        let l = self.chol.l();
        let w = l
            .solve_lower_triangular(&k_dq)
            .expect("triangular solve against a cholesky factor cannot fail");
        let var = DVector::from_fn(queries.len(), |j, _| {
            (self.kernel.variance - w.column(j).norm_squared()).max(0.0)
        });
        (mean, var)
    }
}

/// Conditions the model on its design runs at a query set.
///
/// Returns the exact partitioned-Gaussian conditional: mean
/// `h(Q)' beta + K(Q, D) C^-1 (y - H beta)` and covariance
/// `sigma^2 R(Q) - K(Q, D) C^-1 K(D, Q)`. The query block carries no nugget,
/// so with a zero-nugget model the posterior interpolates the design runs.
/// Empty queries give an empty posterior.
pub fn gp_condition(model: &GpModel, queries: &[Vec<f64>]) -> Result<GpPosterior> {
    let dim = model.input_dim();
    if queries.iter().any(|q| q.len() != dim) {
        return Err(CalError::invalid(format!(
            "queries must have dimension {dim}"
        )));
    }
    if queries.is_empty() {
        return Ok(GpPosterior {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        });
    }
    let mean = model.posterior_mean(queries);
    let sigma2 = model.kernel.variance;
    let prior_qq = correlation_matrix(queries, &model.kernel) * sigma2;
    let k_dq = cross_correlation(&model.design, queries, &model.kernel) * sigma2;
    let l = model.chol.l();
    let w = l
        .solve_lower_triangular(&k_dq)
        .expect("triangular solve against a cholesky factor cannot fail");
    let mut cov = prior_qq - w.transpose() * &w;
    // Symmetrize to keep round-off from breaking downstream factorizations.
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GpPosterior { mean, cov })
}

/// Predictivity score `Q^2 = 1 - SSE / SST` of a model on held-out runs.
///
/// 1 means perfect prediction, 0 matches predicting the holdout mean, and
/// negative values are worse than that. Requires at least two holdout points
/// with non-zero output variance.
pub fn q2_score(model: &GpModel, holdout_x: &[Vec<f64>], holdout_y: &DVector<f64>) -> Result<f64> {
    if holdout_x.len() < 2 {
        return Err(CalError::invalid("q2 needs at least two holdout points"));
    }
    if holdout_x.len() != holdout_y.len() {
        return Err(CalError::invalid(format!(
            "{} holdout inputs but {} outputs",
            holdout_x.len(),
            holdout_y.len()
        )));
    }
    let ybar = holdout_y.mean();
    let sst: f64 = holdout_y.iter().map(|y| (y - ybar).powi(2)).sum();
    if sst == 0.0 {
        return Err(CalError::invalid(
            "holdout outputs are constant; q2 is undefined",
        ));
    }
    let mu = model.posterior_mean(holdout_x);
    let sse: f64 = (holdout_y - mu).iter().map(|e| e * e).sum();
    Ok(1.0 - sse / sst)
}

/// Restart range for the correlation length, in normalized-input units.
const PSI_RESTART_RANGE: (f64, f64) = (1e-2, 3.0);
/// Hard search box, slightly wider than the restart range.
const PSI_BOUNDS: (f64, f64) = (1e-3, 30.0);
/// Variance search box relative to the output variance. The lower edge is
/// the floor reached when the trend explains the outputs exactly.
const SIGMA2_REL_BOUNDS: (f64, f64) = (1e-10, 1e6);

/// Fits `(beta, sigma^2, psi)` by maximizing the log marginal density of the
/// design outputs (the partial likelihood of the emulation step).
///
/// `beta` is profiled in closed form by generalized least squares at each
/// `(sigma^2, psi)` visited; `(log psi, log sigma^2)` is searched with a
/// simplex from `n_restarts` starting ranges drawn log-uniformly on
/// [1e-2, 3]. Deterministic for a given seed; ties keep the lowest restart
/// index. If every restart fails to factorize, an error is returned.
pub fn fit_hyperparameters(
    design: &[Vec<f64>],
    outputs: &DVector<f64>,
    basis: BasisSpec,
    family: KernelFamily,
    n_restarts: usize,
    seed: u64,
) -> Result<GpModel> {
    if n_restarts == 0 {
        return Err(CalError::invalid("need at least one restart"));
    }
    let n = design.len();
    if n == 0 || design[0].is_empty() {
        return Err(CalError::invalid("design must be non-empty"));
    }
    let dim = design[0].len();
    let regressors = basis.regressors(dim);
    let m = regressors.len();
    if n < m + 2 {
        return Err(CalError::invalid(format!(
            "need at least {} runs to fit {} trend coefficients",
            m + 2,
            m
        )));
    }
    if outputs.len() != n {
        return Err(CalError::invalid(format!(
            "{n} design points but {} outputs",
            outputs.len()
        )));
    }
    if outputs.iter().any(|y| !y.is_finite()) {
        return Err(CalError::invalid("outputs must be finite"));
    }

    let h = h_matrix(&regressors, design);
    let ybar = outputs.mean();
    let yvar = outputs.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / n as f64;
    let scale = yvar.max(1e-30);
    let (s2_lo, s2_hi) = (SIGMA2_REL_BOUNDS.0 * scale, SIGMA2_REL_BOUNDS.1 * scale);

    // Profiled GLS and the log partial likelihood at clamped (psi, sigma2).
    // Returns (negative loglik, beta) or None when factorization fails.
    let evaluate = |ln_psi: f64, ln_s2: f64| -> Option<(f64, DVector<f64>)> {
        let psi = ln_psi.exp().clamp(PSI_BOUNDS.0, PSI_BOUNDS.1);
        let s2 = ln_s2.exp().clamp(s2_lo, s2_hi);
        let kernel = KernelSpec::with_nugget(family, psi, 1.0, DEFAULT_NUGGET_REL).ok()?;
        let k = design_covariance(design, &kernel);
        let chol = Cholesky::new(k)?;
        let kinv_h = chol.solve(&h);
        let kinv_y = chol.solve(outputs);
        let hkh = h.transpose() * &kinv_h;
        let hky = h.transpose() * &kinv_y;
        let beta = hkh.lu().solve(&hky)?;
        let resid = outputs - &h * &beta;
        let q = resid.dot(&chol.solve(&resid));
        let ln_det_k: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let loglik = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln()
                + n as f64 * s2.ln()
                + ln_det_k
                + q / s2);
        if !loglik.is_finite() {
            return None;
        }
        Some((-loglik, beta))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (PSI_RESTART_RANGE.0.ln(), PSI_RESTART_RANGE.1.ln());
    let starts: Vec<f64> = (0..n_restarts)
        .map(|_| rng.random_range(lo..hi))
        .collect();

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for (k, &ln_psi0) in starts.iter().enumerate() {
        // Seed sigma^2 at its closed-form profile value for this psi.
        let psi0 = ln_psi0.exp();
        let kernel = match KernelSpec::with_nugget(family, psi0, 1.0, DEFAULT_NUGGET_REL) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let s2_init = Cholesky::new(design_covariance(design, &kernel))
            .map(|chol| {
                let kinv_h = chol.solve(&h);
                let hkh = h.transpose() * &kinv_h;
                let hky = h.transpose() * chol.solve(outputs);
                match hkh.lu().solve(&hky) {
                    Some(beta) => {
                        let resid = outputs - &h * beta;
                        (resid.dot(&chol.solve(&resid)) / n as f64).clamp(s2_lo, s2_hi)
                    }
                    None => scale,
                }
            })
            .unwrap_or(scale);

        let result = nelder_mead(
            |z| evaluate(z[0], z[1]).map(|(nll, _)| nll).unwrap_or(f64::INFINITY),
            &[ln_psi0, s2_init.ln()],
            &[0.5, 0.5],
            NmOptions {
                max_evals: 300,
                tol_f: 1e-9,
                tol_x: 1e-8,
            },
        );
        if !result.f.is_finite() {
            continue;
        }
        // Strict improvement keeps the lowest restart index on ties.
        if best.as_ref().map_or(true, |(f, _, _)| result.f < *f) {
            best = Some((result.f, result.x, k));
        }
    }

    let (neg_loglik, z, chosen) = best.ok_or_else(|| {
        CalError::numerical("every restart failed to produce a usable fit")
    })?;
    let (neg_ll_check, beta) = evaluate(z[0], z[1]).ok_or_else(|| {
        CalError::numerical("fitted hyperparameters failed to re-evaluate")
    })?;
    debug_assert!((neg_ll_check - neg_loglik).abs() <= 1e-6 * (1.0 + neg_loglik.abs()));

    let psi = z[0].exp().clamp(PSI_BOUNDS.0, PSI_BOUNDS.1);
    let s2 = z[1].exp().clamp(s2_lo, s2_hi);
    let kernel = KernelSpec::new(family, psi, s2)?;
    let mean = MeanBasis::new(regressors, beta)?;
    let mut model = GpModel::new(mean, kernel, design.to_vec(), outputs.clone())?;
    model.fit = Some(FitInfo {
        log_likelihood: -neg_loglik,
        restarts: n_restarts,
        chosen_restart: chosen,
    });
    Ok(model)
}
