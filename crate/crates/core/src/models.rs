//! Statistical model structures and their likelihoods.
//!
//! Field observations are related to a computer code through one of four
//! structures, indexed by whether the code is run directly or replaced by a
//! GP emulator, and whether a GP discrepancy term absorbs model error:
//!
//! * M1: `y = f(x, theta) + e` (code plus measurement noise)
//! * M2: `y = F(x, theta) + e` (emulated code plus noise)
//! * M3: `y = f(x, theta) + d(x) + e` (code plus discrepancy plus noise)
//! * M4: `y = F(x, theta) + d(x) + e` (emulator plus discrepancy plus noise)
//!
//! with `e ~ N(0, sigma_err^2)` i.i.d., `F` a GP over the joint normalized
//! `(x, theta)` space trained on design runs `y_c = f(D)`, and `d` a
//! zero-mean GP over normalized `x` (a trend is supported but off by
//! default).
//!
//! For the emulated models, the joint density of `(y_exp, y_c)` factors as
//! the marginal density of the design runs (the "partial" likelihood, which
//! drives emulator fitting and knows nothing of the field data) times the
//! conditional density of the field data given the design runs (the
//! "conditional" likelihood, which drives calibration). `loglik_full`,
//! `loglik_partial`, and `loglik_conditional` implement the three pieces;
//! the factorization `full = partial + conditional` is exact and is pinned
//! by the acceptance suite.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::design::Design;
use crate::error::{CalError, Result};
use crate::gp::{fit_hyperparameters, gp_condition, h_matrix, BasisSpec, GpModel, MeanBasis};
use crate::kernel::{correlation_matrix, KernelFamily, KernelSpec};
use crate::sim::Simulator;

/// Named calibration-parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(CalError::invalid(format!(
                "{} names but {} values",
                names.len(),
                values.len()
            )));
        }
        if names.is_empty() {
            return Err(CalError::invalid("parameter vector cannot be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CalError::invalid("parameter values must be finite"));
        }
        Ok(ParameterVector { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Field observations: an input matrix (rows are observation sites) and one
/// scalar response per row.
#[derive(Debug, Clone)]
pub struct FieldDataSet {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl FieldDataSet {
    pub fn new(names: Vec<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(CalError::data("field data must contain at least one row"));
        }
        if names.len() != x.ncols() {
            return Err(CalError::data(format!(
                "{} column names but {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(CalError::data(format!(
                "{} input rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(CalError::data("field data must be finite"));
        }
        Ok(FieldDataSet { names, x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Copies the given rows into a new dataset (order preserved).
    pub fn subset(&self, rows: &[usize]) -> Result<FieldDataSet> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(CalError::invalid("subset row out of range"));
        }
        let x = DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        FieldDataSet::new(self.names.clone(), x, y)
    }

    /// Per-column observed (min, max).
    pub fn column_bounds(&self, columns: &[usize]) -> Vec<(f64, f64)> {
        columns
            .iter()
            .map(|&j| {
                let col = self.x.column(j);
                (col.min(), col.max())
            })
            .collect()
    }
}

/// A univariate prior distribution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Prior {
    Gaussian { mean: f64, variance: f64 },
    /// Shape-scale parameterization: mean `shape * scale`.
    Gamma { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Degenerate mass at one value; pins a parameter in predictive draws.
    Point { value: f64 },
}

impl Prior {
    /// Validates the hyperparameters.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Prior::Gaussian { mean, variance } => mean.is_finite() && *variance > 0.0,
            Prior::Gamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            Prior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Prior::Point { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(CalError::invalid(format!("degenerate prior {self:?}")))
        }
    }

    /// Log density at `v`; out-of-support values give `-inf`.
    pub fn log_density(&self, v: f64) -> f64 {
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self {
            Prior::Gaussian { mean, variance } => {
                -0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                    - (v - mean).powi(2) / (2.0 * variance)
            }
            Prior::Gamma { shape, scale } => {
                if v <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (shape - 1.0) * v.ln()
                        - v / scale
                        - shape * scale.ln()
                        - statrs::function::gamma::ln_gamma(*shape)
                }
            }
            Prior::Uniform { lo, hi } => {
                if v < *lo || v > *hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            // Degenerate support: only the pinned value is admissible.
            Prior::Point { value } => {
                if v == *value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Prior::Gaussian { mean, .. } => *mean,
            Prior::Gamma { shape, scale } => shape * scale,
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::Point { value } => *value,
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Prior::Gaussian { variance, .. } => variance.sqrt(),
            Prior::Gamma { shape, scale } => shape.sqrt() * scale,
            Prior::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            Prior::Point { .. } => 0.0,
        }
    }

    /// Draws one value (used by prior predictive sampling).
    pub fn draw<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        use rand_distr::Distribution;
        match self {
            Prior::Gaussian { mean, variance } => {
                rand_distr::Normal::new(*mean, variance.sqrt())
                    .expect("validated prior")
                    .sample(rng)
            }
            Prior::Gamma { shape, scale } => rand_distr::Gamma::new(*shape, *scale)
                .expect("validated prior")
                .sample(rng),
            Prior::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            Prior::Point { value } => {
                // Consume one variate so draw sequences stay aligned across specs.
                let _: f64 = rng.random();
                *value
            }
        }
    }
}

/// Ordered, named prior declarations. Parameters without an entry get an
/// improper flat prior contributing 0 to the log density.
#[derive(Debug, Clone, Default)]
pub struct PriorSpec {
    entries: Vec<(String, Prior)>,
}

impl PriorSpec {
    pub fn new(entries: Vec<(String, Prior)>) -> Result<Self> {
        for (name, prior) in &entries {
            prior
                .validate()
                .map_err(|e| CalError::invalid(format!("prior '{name}': {e}")))?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.clone()) {
                return Err(CalError::invalid(format!("duplicate prior for '{name}'")));
            }
        }
        Ok(PriorSpec { entries })
    }

    pub fn entries(&self) -> &[(String, Prior)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Prior> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }
}

/// Joint log prior of named values under a spec; names without a declared
/// prior are flat. `-inf` as soon as any component is out of support.
pub fn log_prior(names: &[String], values: &[f64], priors: &PriorSpec) -> Result<f64> {
    if names.len() != values.len() {
        return Err(CalError::invalid(format!(
            "{} names but {} values",
            names.len(),
            values.len()
        )));
    }
    let mut total = 0.0;
    for (name, &v) in names.iter().zip(values) {
        if let Some(p) = priors.get(name) {
            let ld = p.log_density(v);
            if ld == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += ld;
        }
    }
    Ok(total)
}

/// Log density of a multivariate Gaussian evaluated via one Cholesky
/// factorization. Errors if the covariance is not positive definite.
pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(CalError::invalid("mvn dimensions disagree"));
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| CalError::numerical("mvn covariance is not positive definite"))?;
    let resid = y - mean;
    let half = chol
        .l()
        .solve_lower_triangular(&resid)
        .ok_or_else(|| CalError::numerical("triangular solve failed"))?;
    let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det + half.norm_squared()))
}

/// Which structure relates field data to the code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    M1,
    M2,
    M3,
    M4,
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelVariant::M1 => write!(f, "m1"),
            ModelVariant::M2 => write!(f, "m2"),
            ModelVariant::M3 => write!(f, "m3"),
            ModelVariant::M4 => write!(f, "m4"),
        }
    }
}

impl ModelVariant {
    pub fn uses_emulator(&self) -> bool {
        matches!(self, ModelVariant::M2 | ModelVariant::M4)
    }

    pub fn uses_discrepancy(&self) -> bool {
        matches!(self, ModelVariant::M3 | ModelVariant::M4)
    }
}

/// For emulated variants: whether emulator hyperparameters are plugged in
/// from the emulation step (modular) or carried in the sampled vector (full).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    Modular,
    Full,
}

/// Emulator structure bound to a training design: kernel family, trend
/// basis, relative nugget, the design with its runs, and the mapping from
/// field-data columns to design variable coordinates.
#[derive(Debug, Clone)]
pub struct EmulatorContext {
    pub family: KernelFamily,
    pub basis: BasisSpec,
    /// Nugget applied to the design block, relative to the GP variance.
    pub nugget_rel: f64,
    design: Design,
    y_c: DVector<f64>,
    /// Field-data column index feeding each design variable coordinate.
    var_columns: Vec<usize>,
    design_norm: Vec<Vec<f64>>,
}

impl EmulatorContext {
    pub fn new(
        design: Design,
        y_c: DVector<f64>,
        family: KernelFamily,
        basis: BasisSpec,
        nugget_rel: f64,
        var_columns: Vec<usize>,
    ) -> Result<Self> {
        if y_c.len() != design.len() {
            return Err(CalError::invalid(format!(
                "{} design points but {} runs",
                design.len(),
                y_c.len()
            )));
        }
        if var_columns.len() != design.var_dim() {
            return Err(CalError::invalid(format!(
                "design has {} variable coordinates but {} column mappings",
                design.var_dim(),
                var_columns.len()
            )));
        }
        if !(nugget_rel >= 0.0) {
            return Err(CalError::invalid("relative nugget must be non-negative"));
        }
        let design_norm = design.normalized_points();
        Ok(EmulatorContext {
            family,
            basis,
            nugget_rel,
            design,
            y_c,
            var_columns,
            design_norm,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn y_c(&self) -> &DVector<f64> {
        &self.y_c
    }

    pub fn var_columns(&self) -> &[usize] {
        &self.var_columns
    }

    pub fn design_norm(&self) -> &[Vec<f64>] {
        &self.design_norm
    }

    pub fn param_dim(&self) -> usize {
        self.design.param_dim()
    }

    /// Normalized joint tuple for one field row and a parameter value.
    pub fn joint_tuple(&self, x_row: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.design.var_dim();
        let mut t = Vec::with_capacity(d + theta.len());
        for (j, &col) in self.var_columns.iter().enumerate() {
            t.push(self.design.normalize_coord(j, x_row[col]));
        }
        for (k, &v) in theta.iter().enumerate() {
            t.push(self.design.normalize_coord(d + k, v));
        }
        t
    }

    /// Normalized joint tuples for every row of a dataset.
    pub fn joint_tuples(&self, data: &FieldDataSet, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.design.param_dim() {
            return Err(CalError::invalid(format!(
                "theta must have {} components",
                self.design.param_dim()
            )));
        }
        let max_col = self.var_columns.iter().copied().max().unwrap_or(0);
        if max_col >= data.x().ncols() {
            return Err(CalError::invalid(
                "emulator variable column exceeds field data width",
            ));
        }
        Ok((0..data.n())
            .map(|i| self.joint_tuple(&data.x_row(i), theta))
            .collect())
    }

    /// Assembles a GP over the normalized design for explicit parameters.
    pub fn gp_with(&self, beta: &DVector<f64>, sigma2: f64, psi: f64) -> Result<GpModel> {
        if !(sigma2 > 0.0) || !(psi > 0.0) {
            return Err(CalError::invalid(
                "emulator variance and range must be positive",
            ));
        }
        let dim = self.design.dim();
        let mean = MeanBasis::new(self.basis.regressors(dim), beta.clone())?;
        let kernel =
            KernelSpec::with_nugget(self.family, psi, sigma2, self.nugget_rel * sigma2)?;
        GpModel::new(mean, kernel, self.design_norm.clone(), self.y_c.clone())
    }

    /// Fits emulator hyperparameters by maximum partial likelihood. This is
    /// the emulation step of modular calibration; it sees only design runs.
    pub fn fit(&self, n_restarts: usize, seed: u64) -> Result<GpModel> {
        fit_hyperparameters(
            &self.design_norm,
            &self.y_c,
            self.basis,
            self.family,
            n_restarts,
            seed,
        )
    }
}

/// Discrepancy structure: kernel family, optional trend, and the normalized
/// coordinates of the field inputs it acts on.
#[derive(Debug, Clone)]
pub struct DiscrepancyContext {
    pub family: KernelFamily,
    /// Optional trend `H_d(x) beta_d` on normalized inputs; None is the
    /// zero-mean default.
    pub mean: Option<MeanBasis>,
    var_columns: Vec<usize>,
    bounds: Vec<(f64, f64)>,
}

impl DiscrepancyContext {
    pub fn new(
        family: KernelFamily,
        var_columns: Vec<usize>,
        bounds: Vec<(f64, f64)>,
        mean: Option<MeanBasis>,
    ) -> Result<Self> {
        if var_columns.is_empty() {
            return Err(CalError::invalid("discrepancy needs at least one input column"));
        }
        if bounds.len() != var_columns.len() {
            return Err(CalError::invalid("one bound pair per discrepancy column"));
        }
        if bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi) {
            return Err(CalError::invalid("discrepancy bounds must be finite with lo <= hi"));
        }
        Ok(DiscrepancyContext {
            family,
            mean,
            var_columns,
            bounds,
        })
    }

    /// Builds a context whose normalization bounds are the observed extent
    /// of the given columns.
    pub fn from_data(data: &FieldDataSet, var_columns: Vec<usize>, family: KernelFamily) -> Result<Self> {
        let bounds = data.column_bounds(&var_columns);
        DiscrepancyContext::new(family, var_columns, bounds, None)
    }

    pub fn var_columns(&self) -> &[usize] {
        &self.var_columns
    }

    /// Normalizes the selected columns of every row.
    pub fn normalize_rows(&self, data: &FieldDataSet) -> Result<Vec<Vec<f64>>> {
        let max_col = self.var_columns.iter().copied().max().unwrap();
        if max_col >= data.x().ncols() {
            return Err(CalError::invalid(
                "discrepancy column exceeds field data width",
            ));
        }
        Ok((0..data.n())
            .map(|i| self.normalize_row(&data.x_row(i)))
            .collect())
    }

    /// Normalizes the selected columns of one raw row.
    pub fn normalize_row(&self, x_row: &[f64]) -> Vec<f64> {
        self.var_columns
            .iter()
            .zip(&self.bounds)
            .map(|(&col, (lo, hi))| {
                if hi > lo {
                    (x_row[col] - lo) / (hi - lo)
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// Discrepancy covariance at normalized rows: `sigma_d^2 R_d`.
    pub fn covariance(&self, x_norm: &[Vec<f64>], sigma_d2: f64, psi_d: f64) -> Result<DMatrix<f64>> {
        if !(psi_d > 0.0) {
            return Err(CalError::invalid("discrepancy range must be positive"));
        }
        if !(sigma_d2 >= 0.0) {
            return Err(CalError::invalid("discrepancy variance must be non-negative"));
        }
        let kernel = KernelSpec::with_nugget(self.family, psi_d, 1.0, 0.0)?;
        Ok(correlation_matrix(x_norm, &kernel) * sigma_d2)
    }

    /// Trend values at normalized rows (zero when no trend is configured).
    pub fn trend(&self, x_norm: &[Vec<f64>]) -> DVector<f64> {
        match &self.mean {
            Some(basis) => {
                DVector::from_iterator(x_norm.len(), x_norm.iter().map(|r| basis.value(r)))
            }
            None => DVector::zeros(x_norm.len()),
        }
    }
}

/// Code plus noise: `-n/2 log(2 pi sigma^2) - ||y - f(X, theta)||^2 / (2 sigma^2)`.
pub fn loglik_m1(
    data: &FieldDataSet,
    simulator: &dyn Simulator,
    theta: &[f64],
    sigma_err2: f64,
) -> Result<f64> {
    if !(sigma_err2 > 0.0) {
        return Err(CalError::invalid("measurement variance must be positive"));
    }
    let n = data.n();
    let mut ss = 0.0;
    for i in 0..n {
        let f = simulator.run(&data.x_row(i), theta)?;
        let r = data.y()[i] - f;
        ss += r * r;
    }
    Ok(-0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma_err2).ln() - ss / (2.0 * sigma_err2))
}

/// Code plus discrepancy plus noise: Gaussian with mean
/// `f(X, theta) + H_d(X) beta_d` and covariance `S_d(X) + sigma_err^2 I`.
pub fn loglik_m3(
    data: &FieldDataSet,
    simulator: &dyn Simulator,
    disc: &DiscrepancyContext,
    theta: &[f64],
    sigma_delta2: f64,
    psi_delta: f64,
    sigma_err2: f64,
) -> Result<f64> {
    if !(sigma_err2 > 0.0) {
        return Err(CalError::invalid("measurement variance must be positive"));
    }
    let n = data.n();
    let x_norm = disc.normalize_rows(data)?;
    let mut mean = disc.trend(&x_norm);
    for i in 0..n {
        mean[i] += simulator.run(&data.x_row(i), theta)?;
    }
    let mut cov = disc.covariance(&x_norm, sigma_delta2, psi_delta)?;
    for i in 0..n {
        cov[(i, i)] += sigma_err2;
    }
    mvn_logpdf(data.y(), &mean, &cov)
}

/// Marginal log density of the design runs under the emulator GP: Gaussian
/// with mean `H(D) beta` and covariance `sigma^2 (R(D) + nugget I)`.
///
/// This is the quantity the emulation step maximizes; it involves no field
/// data.
pub fn loglik_partial(
    em: &EmulatorContext,
    beta_s: &DVector<f64>,
    sigma_s2: f64,
    psi_s: f64,
) -> Result<f64> {
    let gp = em.gp_with(beta_s, sigma_s2, psi_s)?;
    let h = gp.mean().h_matrix(em.design_norm());
    let mean = h * gp.mean().coefficients();
    let cov = crate::kernel::design_covariance(em.design_norm(), gp.kernel());
    mvn_logpdf(em.y_c(), &mean, &cov)
}

/// Moments of the emulator at the field inputs, conditioned on the design
/// runs: the partitioned-Gaussian conditional mean and covariance of
/// `F(X, theta)` given `y_c`. Measurement noise and discrepancy are NOT
/// included here; they enter the conditional likelihood per variant.
pub fn conditional_moments(
    em: &EmulatorContext,
    data: &FieldDataSet,
    theta: &[f64],
    beta_s: &DVector<f64>,
    sigma_s2: f64,
    psi_s: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gp = em.gp_with(beta_s, sigma_s2, psi_s)?;
    let tuples = em.joint_tuples(data, theta)?;
    let post = gp_condition(&gp, &tuples)?;
    Ok((post.mean, post.cov))
}

/// An emulator with fitted hyperparameters plugged in, its design
/// covariance factorized once for reuse across posterior evaluations.
#[derive(Debug, Clone)]
pub struct PluggedEmulator {
    em: EmulatorContext,
    gp: GpModel,
}

impl PluggedEmulator {
    /// Plugs explicit `(beta, sigma^2, psi)` into the emulator structure.
    pub fn with_parameters(
        em: EmulatorContext,
        beta_s: &DVector<f64>,
        sigma_s2: f64,
        psi_s: f64,
    ) -> Result<Self> {
        let gp = em.gp_with(beta_s, sigma_s2, psi_s)?;
        Ok(PluggedEmulator { em, gp })
    }

    /// Runs the emulation step (maximum partial likelihood) and plugs the
    /// result in. This is step one of modular calibration.
    pub fn fit(em: EmulatorContext, n_restarts: usize, seed: u64) -> Result<Self> {
        let gp = em.fit(n_restarts, seed)?;
        Ok(PluggedEmulator { em, gp })
    }

    pub fn context(&self) -> &EmulatorContext {
        &self.em
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    /// Conditional moments of the emulator at the field inputs.
    pub fn conditional_moments(
        &self,
        data: &FieldDataSet,
        theta: &[f64],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let tuples = self.em.joint_tuples(data, theta)?;
        let post = gp_condition(&self.gp, &tuples)?;
        Ok((post.mean, post.cov))
    }
}

/// Conditional log likelihood of the field data given the design runs, with
/// emulator hyperparameters plugged in: Gaussian with mean `mu_(exp|c)` and
/// covariance `S_(exp|c) + S_d(X) + sigma_err^2 I` (drop `S_d` when no
/// discrepancy is configured).
pub fn loglik_conditional(
    plugged: &PluggedEmulator,
    data: &FieldDataSet,
    theta: &[f64],
    disc: Option<(&DiscrepancyContext, f64, f64)>,
    sigma_err2: f64,
) -> Result<f64> {
    if !(sigma_err2 > 0.0) {
        return Err(CalError::invalid("measurement variance must be positive"));
    }
    let (mut mean, mut cov) = plugged.conditional_moments(data, theta)?;
    if let Some((ctx, sigma_d2, psi_d)) = disc {
        let x_norm = ctx.normalize_rows(data)?;
        cov += ctx.covariance(&x_norm, sigma_d2, psi_d)?;
        mean += ctx.trend(&x_norm);
    }
    for i in 0..data.n() {
        cov[(i, i)] += sigma_err2;
    }
    mvn_logpdf(data.y(), &mean, &cov)
}

/// Joint log likelihood of `(y_exp, y_c)` under an emulated variant:
/// Gaussian over `n + N` values with block mean `(H(X, theta) beta_s +
/// H_d(X) beta_d, H(D) beta_s)` and covariance blocks `(S_xx + S_d +
/// sigma_err^2 I, S_xc; S_xc', S_cc)` built from the emulator kernel (the
/// design block carries the nugget) and the discrepancy kernel.
pub fn loglik_full(
    em: &EmulatorContext,
    data: &FieldDataSet,
    theta: &[f64],
    beta_s: &DVector<f64>,
    sigma_s2: f64,
    psi_s: f64,
    disc: Option<(&DiscrepancyContext, f64, f64)>,
    sigma_err2: f64,
) -> Result<f64> {
    if !(sigma_err2 > 0.0) {
        return Err(CalError::invalid("measurement variance must be positive"));
    }
    if !(sigma_s2 > 0.0) || !(psi_s > 0.0) {
        return Err(CalError::invalid(
            "emulator variance and range must be positive",
        ));
    }
    let n = data.n();
    let big_n = em.design().len();
    let dim = em.design().dim();
    let regressors = em.basis.regressors(dim);
    if beta_s.len() != regressors.len() {
        return Err(CalError::invalid(format!(
            "trend needs {} coefficients, got {}",
            regressors.len(),
            beta_s.len()
        )));
    }

    let tuples = em.joint_tuples(data, theta)?;
    let kernel = KernelSpec::with_nugget(em.family, psi_s, sigma_s2, 0.0)?;

    // Mean blocks.
    let h_x = h_matrix(&regressors, &tuples);
    let h_d = h_matrix(&regressors, em.design_norm());
    let mut mean = DVector::zeros(n + big_n);
    mean.rows_mut(0, n).copy_from(&(&h_x * beta_s));
    mean.rows_mut(n, big_n).copy_from(&(&h_d * beta_s));

    // Covariance blocks.
    let mut cov = DMatrix::zeros(n + big_n, n + big_n);
    let s_xx = correlation_matrix(&tuples, &kernel) * sigma_s2;
    let s_xc = crate::kernel::cross_correlation(&tuples, em.design_norm(), &kernel) * sigma_s2;
    let mut s_cc = correlation_matrix(em.design_norm(), &kernel) * sigma_s2;
    for i in 0..big_n {
        s_cc[(i, i)] += em.nugget_rel * sigma_s2;
    }
    cov.view_mut((0, 0), (n, n)).copy_from(&s_xx);
    cov.view_mut((0, n), (n, big_n)).copy_from(&s_xc);
    cov.view_mut((n, 0), (big_n, n)).copy_from(&s_xc.transpose());
    cov.view_mut((n, n), (big_n, big_n)).copy_from(&s_cc);

    if let Some((ctx, sigma_d2, psi_d)) = disc {
        let x_norm = ctx.normalize_rows(data)?;
        let s_d = ctx.covariance(&x_norm, sigma_d2, psi_d)?;
        let trend = ctx.trend(&x_norm);
        for i in 0..n {
            mean[i] += trend[i];
            for j in 0..n {
                cov[(i, j)] += s_d[(i, j)];
            }
        }
    }
    for i in 0..n {
        cov[(i, i)] += sigma_err2;
    }

    let mut y = DVector::zeros(n + big_n);
    y.rows_mut(0, n).copy_from(data.y());
    y.rows_mut(n, big_n).copy_from(em.y_c());
    mvn_logpdf(&y, &mean, &cov)
}

/// A calibration model: variant, code or emulator binding, optional
/// discrepancy, parameter names, and priors.
#[derive(Clone)]
pub struct CalibModel {
    pub variant: ModelVariant,
    pub mode: LikelihoodMode,
    pub simulator: Option<Arc<dyn Simulator>>,
    pub emulator: Option<EmulatorContext>,
    /// Fitted emulator for modular likelihood evaluation (M2/M4).
    pub plugged: Option<PluggedEmulator>,
    pub discrepancy: Option<DiscrepancyContext>,
    pub theta_names: Vec<String>,
    pub priors: PriorSpec,
}

impl std::fmt::Debug for CalibModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CalibModel")
            .field("variant", &self.variant)
            .field("theta_names", &self.theta_names)
            .finish_non_exhaustive()
    }
}

impl CalibModel {
    /// Code plus noise.
    pub fn m1(
        simulator: Arc<dyn Simulator>,
        theta_names: Vec<String>,
        priors: PriorSpec,
    ) -> Result<Self> {
        Self::build(
            ModelVariant::M1,
            Some(simulator),
            None,
            None,
            theta_names,
            priors,
        )
    }

    /// Emulated code plus noise (modular likelihood).
    pub fn m2(em: EmulatorContext, theta_names: Vec<String>, priors: PriorSpec) -> Result<Self> {
        Self::build(ModelVariant::M2, None, Some(em), None, theta_names, priors)
    }

    /// Code plus discrepancy plus noise.
    pub fn m3(
        simulator: Arc<dyn Simulator>,
        disc: DiscrepancyContext,
        theta_names: Vec<String>,
        priors: PriorSpec,
    ) -> Result<Self> {
        Self::build(
            ModelVariant::M3,
            Some(simulator),
            None,
            Some(disc),
            theta_names,
            priors,
        )
    }

    /// Emulated code plus discrepancy plus noise (modular likelihood).
    pub fn m4(
        em: EmulatorContext,
        disc: DiscrepancyContext,
        theta_names: Vec<String>,
        priors: PriorSpec,
    ) -> Result<Self> {
        Self::build(
            ModelVariant::M4,
            None,
            Some(em),
            Some(disc),
            theta_names,
            priors,
        )
    }

    fn build(
        variant: ModelVariant,
        simulator: Option<Arc<dyn Simulator>>,
        emulator: Option<EmulatorContext>,
        discrepancy: Option<DiscrepancyContext>,
        theta_names: Vec<String>,
        priors: PriorSpec,
    ) -> Result<Self> {
        if theta_names.is_empty() {
            return Err(CalError::invalid("need at least one calibration parameter"));
        }
        if variant.uses_emulator() {
            let em = emulator
                .as_ref()
                .ok_or_else(|| CalError::invalid(format!("{variant} needs an emulator")))?;
            if em.param_dim() != theta_names.len() {
                return Err(CalError::invalid(format!(
                    "design has {} parameter coordinates but {} names",
                    em.param_dim(),
                    theta_names.len()
                )));
            }
        } else if simulator.is_none() {
            return Err(CalError::invalid(format!("{variant} needs a simulator")));
        }
        if variant.uses_discrepancy() && discrepancy.is_none() {
            return Err(CalError::invalid(format!(
                "{variant} needs a discrepancy structure"
            )));
        }
        Ok(CalibModel {
            variant,
            mode: LikelihoodMode::Modular,
            simulator,
            emulator,
            plugged: None,
            discrepancy,
            theta_names,
            priors,
        })
    }

    /// Attaches a fitted emulator for modular likelihood evaluation.
    pub fn with_plugged(mut self, plugged: PluggedEmulator) -> Self {
        self.plugged = Some(plugged);
        self
    }

    /// Switches M2/M4 to the joint likelihood over `(y_exp, y_c)` with
    /// emulator hyperparameters carried in the sampled vector.
    pub fn with_full_likelihood(mut self) -> Result<Self> {
        if !self.variant.uses_emulator() {
            return Err(CalError::invalid(
                "full likelihood mode applies to emulated variants only",
            ));
        }
        self.mode = LikelihoodMode::Full;
        Ok(self)
    }

    /// Names of the non-theta parameters the posterior is over, in sampling
    /// order. Scale-like entries are positive by definition.
    pub fn nuisance_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.variant.uses_emulator() && self.mode == LikelihoodMode::Full {
            let dim = self
                .emulator
                .as_ref()
                .expect("validated emulated variant")
                .design()
                .dim();
            let basis = self.emulator.as_ref().unwrap().basis;
            for r in basis.regressors(dim) {
                names.push(format!("beta_{}", r.name()));
            }
            names.push("sigma_s2".to_string());
            names.push("psi_s".to_string());
        }
        if self.variant.uses_discrepancy() {
            names.push("sigma_delta2".to_string());
            names.push("psi_delta".to_string());
        }
        names.push("sigma_err2".to_string());
        names
    }

    /// Whether the named sampled parameter is positive by definition (and
    /// therefore sampled on the log scale).
    pub fn is_positive_param(name: &str) -> bool {
        matches!(
            name,
            "sigma_err2" | "sigma_delta2" | "psi_delta" | "sigma_s2" | "psi_s"
        )
    }

    /// Log likelihood at explicit `(theta, nuisance)` values.
    pub fn log_likelihood(
        &self,
        data: &FieldDataSet,
        theta: &[f64],
        nuisance: &[f64],
    ) -> Result<f64> {
        let expected = self.nuisance_names().len();
        if nuisance.len() != expected {
            return Err(CalError::invalid(format!(
                "{} expects {expected} nuisance values, got {}",
                self.variant,
                nuisance.len()
            )));
        }
        if theta.len() != self.theta_names.len() {
            return Err(CalError::invalid(format!(
                "expects {} theta components, got {}",
                self.theta_names.len(),
                theta.len()
            )));
        }
        // Scale-like parameters at or below zero are out of support rather
        // than hard errors, so optimizers and samplers probing the boundary
        // see an infinitely unlikely value instead of an abort.
        match (self.variant, self.mode) {
            (ModelVariant::M1, _) => {
                let sigma_err2 = nuisance[0];
                if sigma_err2 <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                loglik_m1(
                    data,
                    self.simulator.as_ref().unwrap().as_ref(),
                    theta,
                    sigma_err2,
                )
            }
            (ModelVariant::M3, _) => {
                let (sigma_d2, psi_d, sigma_err2) = (nuisance[0], nuisance[1], nuisance[2]);
                if sigma_d2 < 0.0 || psi_d <= 0.0 || sigma_err2 <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                loglik_m3(
                    data,
                    self.simulator.as_ref().unwrap().as_ref(),
                    self.discrepancy.as_ref().unwrap(),
                    theta,
                    sigma_d2,
                    psi_d,
                    sigma_err2,
                )
            }
            (ModelVariant::M2, LikelihoodMode::Modular) => {
                let sigma_err2 = nuisance[0];
                if sigma_err2 <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let plugged = self.plugged.as_ref().ok_or_else(|| {
                    CalError::invalid("modular likelihood needs a fitted emulator")
                })?;
                loglik_conditional(plugged, data, theta, None, sigma_err2)
            }
            (ModelVariant::M4, LikelihoodMode::Modular) => {
                let (sigma_d2, psi_d, sigma_err2) = (nuisance[0], nuisance[1], nuisance[2]);
                if sigma_d2 < 0.0 || psi_d <= 0.0 || sigma_err2 <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let plugged = self.plugged.as_ref().ok_or_else(|| {
                    CalError::invalid("modular likelihood needs a fitted emulator")
                })?;
                loglik_conditional(
                    plugged,
                    data,
                    theta,
                    Some((self.discrepancy.as_ref().unwrap(), sigma_d2, psi_d)),
                    sigma_err2,
                )
            }
            (variant, LikelihoodMode::Full) => {
                let em = self.emulator.as_ref().unwrap();
                let n_beta = em.basis.regressors(em.design().dim()).len();
                let beta = DVector::from_column_slice(&nuisance[..n_beta]);
                let sigma_s2 = nuisance[n_beta];
                let psi_s = nuisance[n_beta + 1];
                if sigma_s2 <= 0.0 || psi_s <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let (disc, sigma_err2) = if variant == ModelVariant::M4 {
                    let (sigma_d2, psi_d) = (nuisance[n_beta + 2], nuisance[n_beta + 3]);
                    if sigma_d2 < 0.0 || psi_d <= 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    (
                        Some((self.discrepancy.as_ref().unwrap(), sigma_d2, psi_d)),
                        nuisance[n_beta + 4],
                    )
                } else {
                    (None, nuisance[n_beta + 2])
                };
                if sigma_err2 <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                loglik_full(em, data, theta, &beta, sigma_s2, psi_s, disc, sigma_err2)
            }
        }
    }

    /// Log posterior: joint prior plus likelihood. A `-inf` prior
    /// short-circuits without evaluating the likelihood (and therefore
    /// without running the simulator).
    pub fn log_posterior(
        &self,
        data: &FieldDataSet,
        theta: &[f64],
        nuisance: &[f64],
    ) -> Result<f64> {
        let mut names = self.theta_names.clone();
        names.extend(self.nuisance_names());
        let mut values = theta.to_vec();
        values.extend_from_slice(nuisance);
        let lp = log_prior(&names, &values, &self.priors)?;
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let ll = self.log_likelihood(data, theta, nuisance)?;
        Ok(lp + ll)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Provenance;
    use crate::sim::FnSimulator;
    use std::sync::atomic::{AtomicUsize, Ordering};

    // Golden values frozen from a 30-digit evaluation of the closed forms.
    const STD_NORMAL_AT_ZERO: f64 = -0.91893853320467274;
    const GAMMA_2_169_AT_338: f64 = -6.4367515343631282;
    const M1_N1_RESID1_VAR1: f64 = -1.4189385332046727;
    const MVN2_EXCH_COV: f64 = -2.5105165440767337;
    const GAUSS_PRIOR_AT_02: f64 = 1.4269937403493183;

    #[test]
    fn prior_log_densities_match_golden_values() {
        let g = Prior::Gaussian {
            mean: 0.0,
            variance: 1.0,
        };
        assert!((g.log_density(0.0) - STD_NORMAL_AT_ZERO).abs() < 1e-14);
        let ga = Prior::Gamma {
            shape: 2.0,
            scale: 169.0,
        };
        assert!((ga.log_density(338.0) - GAMMA_2_169_AT_338).abs() < 1e-12);
        assert_eq!(ga.log_density(0.0), f64::NEG_INFINITY);
        assert_eq!(ga.log_density(-1.0), f64::NEG_INFINITY);
        let u = Prior::Uniform { lo: 0.0, hi: 1.0 };
        assert_eq!(u.log_density(0.5), 0.0);
        assert_eq!(u.log_density(-0.1), f64::NEG_INFINITY);
        let g2 = Prior::Gaussian {
            mean: 0.143,
            variance: 2.5e-3,
        };
        assert!((g2.log_density(0.2) - GAUSS_PRIOR_AT_02).abs() < 1e-13);
    }

    #[test]
    fn prior_spec_rejects_degenerate_and_duplicate_entries() {
        assert!(PriorSpec::new(vec![(
            "a".into(),
            Prior::Gaussian {
                mean: 0.0,
                variance: 0.0
            }
        )])
        .is_err());
        assert!(PriorSpec::new(vec![(
            "a".into(),
            Prior::Uniform { lo: 1.0, hi: 1.0 }
        )])
        .is_err());
        assert!(PriorSpec::new(vec![
            ("a".into(), Prior::Uniform { lo: 0.0, hi: 1.0 }),
            ("a".into(), Prior::Uniform { lo: 0.0, hi: 2.0 }),
        ])
        .is_err());
    }

    fn single_point_data() -> FieldDataSet {
        FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap()
    }

    #[test]
    fn m1_likelihood_matches_hand_value() {
        let data = single_point_data();
        let sim = FnSimulator(|_: &[f64], _: &[f64]| Ok(0.0));
        let ll = loglik_m1(&data, &sim, &[0.0], 1.0).unwrap();
        assert!((ll - M1_N1_RESID1_VAR1).abs() < 1e-14, "got {ll}");
    }

    #[test]
    fn m3_likelihood_matches_two_point_closed_form() {
        // Two points, full correlation limit: V = [[2, 1], [1, 2]].
        let data = FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_row_slice(2, 1, &[0.2, 0.8]),
            DVector::from_vec(vec![0.3, -0.4]),
        )
        .unwrap();
        let sim = FnSimulator(|_: &[f64], _: &[f64]| Ok(0.0));
        let disc = DiscrepancyContext::from_data(&data, vec![0], KernelFamily::SqExp).unwrap();
        let ll = loglik_m3(&data, &sim, &disc, &[0.0], 1.0, 1e6, 1.0).unwrap();
        assert!((ll - MVN2_EXCH_COV).abs() < 1e-9, "got {ll}");
    }

    fn tiny_emulator() -> EmulatorContext {
        // 1 variable + 1 parameter, 6 design points.
        let points: Vec<Vec<f64>> = vec![
            vec![0.0, 0.1],
            vec![2.0, 0.9],
            vec![4.0, 0.4],
            vec![6.0, 0.6],
            vec![8.0, 0.2],
            vec![10.0, 0.8],
        ];
        let y_c = DVector::from_iterator(6, points.iter().map(|p| p[0].sin() + 2.0 * p[1]));
        let design = Design::new(
            points,
            1,
            1,
            vec![Provenance::Initial; 6],
            vec![(0.0, 10.0), (0.0, 1.0)],
        )
        .unwrap();
        EmulatorContext::new(
            design,
            y_c,
            KernelFamily::Matern52,
            BasisSpec::Constant,
            1e-8,
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn partial_likelihood_equals_dense_evaluation() {
        let em = tiny_emulator();
        let beta = DVector::from_vec(vec![0.7]);
        let ll = loglik_partial(&em, &beta, 1.3, 0.5).unwrap();
        // Independent dense path.
        let kernel = KernelSpec::with_nugget(KernelFamily::Matern52, 0.5, 1.3, 1.3e-8).unwrap();
        let cov = crate::kernel::design_covariance(em.design_norm(), &kernel);
        let mean = DVector::from_element(6, 0.7);
        let want = mvn_logpdf(em.y_c(), &mean, &cov).unwrap();
        assert!((ll - want).abs() < 1e-10);
    }

    #[test]
    fn conditional_variance_collapses_at_a_design_point() {
        let em = tiny_emulator();
        // Field row whose joint tuple coincides with design point 2 at
        // theta = 0.4: x = 4.0.
        let data = FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_row_slice(2, 1, &[4.0, 7.3]),
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        let beta = DVector::from_vec(vec![0.0]);
        let (mu, cov) = conditional_moments(&em, &data, &[0.4], &beta, 1.0, 0.6).unwrap();
        // Nugget is tiny, so the collapse tolerance is of its order.
        assert!(cov[(0, 0)] < 1e-6, "variance {} not collapsed", cov[(0, 0)]);
        assert!(cov[(0, 1)].abs() < 1e-3);
        let y2 = em.y_c()[2];
        assert!((mu[0] - y2).abs() < 1e-3, "mean {} vs design run {y2}", mu[0]);
    }

    #[test]
    fn far_queries_revert_to_prior_variance() {
        let em = tiny_emulator();
        // x far outside the design extent: correlation with every design
        // point is negligible, so conditional variance is the prior
        // variance; the conditional likelihood then adds sigma_err^2.
        let data = FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_row_slice(1, 1, &[1000.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let beta = DVector::from_vec(vec![0.0]);
        let (_, cov) = conditional_moments(&em, &data, &[0.5], &beta, 1.7, 0.3).unwrap();
        assert!((cov[(0, 0)] - 1.7).abs() < 1e-6, "got {}", cov[(0, 0)]);
    }

    #[test]
    fn full_likelihood_factorizes_exactly() {
        let em = tiny_emulator();
        let data = FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_row_slice(3, 1, &[1.0, 5.0, 9.0]),
            DVector::from_vec(vec![0.9, -0.2, 1.4]),
        )
        .unwrap();
        let beta = DVector::from_vec(vec![0.4]);
        let (s2, psi, se2) = (1.2, 0.45, 0.3);
        let theta = [0.35];

        // M2 shape: no discrepancy.
        let full = loglik_full(&em, &data, &theta, &beta, s2, psi, None, se2).unwrap();
        let partial = loglik_partial(&em, &beta, s2, psi).unwrap();
        let plugged =
            PluggedEmulator::with_parameters(em.clone(), &beta, s2, psi).unwrap();
        let cond = loglik_conditional(&plugged, &data, &theta, None, se2).unwrap();
        assert!(
            (full - (partial + cond)).abs() < 1e-8,
            "full {full} vs partial {partial} + conditional {cond}"
        );

        // M4 shape: with discrepancy.
        let disc = DiscrepancyContext::from_data(&data, vec![0], KernelFamily::SqExp).unwrap();
        let full = loglik_full(
            &em,
            &data,
            &theta,
            &beta,
            s2,
            psi,
            Some((&disc, 0.8, 0.25)),
            se2,
        )
        .unwrap();
        let cond =
            loglik_conditional(&plugged, &data, &theta, Some((&disc, 0.8, 0.25)), se2).unwrap();
        assert!((full - (partial + cond)).abs() < 1e-8);
    }

    #[test]
    fn out_of_support_prior_short_circuits_without_simulator_calls() {
        static CALLS: AtomicUsize = AtomicUsize::new(0);
        let sim = FnSimulator(|_: &[f64], _: &[f64]| {
            CALLS.fetch_add(1, Ordering::SeqCst);
            Ok(0.0)
        });
        let priors = PriorSpec::new(vec![
            ("theta".into(), Prior::Uniform { lo: 0.0, hi: 1.0 }),
            (
                "sigma_err2".into(),
                Prior::Gamma {
                    shape: 2.0,
                    scale: 169.0,
                },
            ),
        ])
        .unwrap();
        let model = CalibModel::m1(Arc::new(sim), vec!["theta".into()], priors).unwrap();
        let data = single_point_data();
        let lp = model.log_posterior(&data, &[2.0], &[100.0]).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        assert_eq!(CALLS.load(Ordering::SeqCst), 0, "simulator was called");

        // In-support evaluation equals prior + likelihood.
        let lp = model.log_posterior(&data, &[0.5], &[100.0]).unwrap();
        assert!(CALLS.load(Ordering::SeqCst) > 0);
        let want = Prior::Gamma {
            shape: 2.0,
            scale: 169.0,
        }
        .log_density(100.0)
            + model.log_likelihood(&data, &[0.5], &[100.0]).unwrap();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn nuisance_layouts_per_variant() {
        let sim: Arc<dyn Simulator> = Arc::new(FnSimulator(|_: &[f64], _: &[f64]| Ok(0.0)));
        let m1 = CalibModel::m1(sim.clone(), vec!["a".into()], PriorSpec::default()).unwrap();
        assert_eq!(m1.nuisance_names(), vec!["sigma_err2"]);

        let data = single_point_data();
        let disc = DiscrepancyContext::from_data(&data, vec![0], KernelFamily::SqExp).unwrap();
        let m3 = CalibModel::m3(sim, disc, vec!["a".into()], PriorSpec::default()).unwrap();
        assert_eq!(
            m3.nuisance_names(),
            vec!["sigma_delta2", "psi_delta", "sigma_err2"]
        );

        let m2 = CalibModel::m2(tiny_emulator(), vec!["a".into()], PriorSpec::default()).unwrap();
        assert_eq!(m2.nuisance_names(), vec!["sigma_err2"]);
        let m2_full = m2.with_full_likelihood().unwrap();
        assert_eq!(
            m2_full.nuisance_names(),
            vec!["beta_const", "sigma_s2", "psi_s", "sigma_err2"]
        );
    }
}
