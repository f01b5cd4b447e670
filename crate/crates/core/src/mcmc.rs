//! Markov chain Monte Carlo samplers and posterior summaries.
//!
//! Calibration runs a two-phase scheme: a Metropolis-within-Gibbs warm-up
//! whose sample covariance shapes the proposal of a full-vector
//! random-walk Metropolis phase. Positive parameters (variances, ranges)
//! are sampled on the log scale with the Jacobian folded into the target;
//! chains store samples and log-posterior values on the original scale.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CalError, Result};
use crate::models::{CalibModel, FieldDataSet, Prior};

/// Sampler output: one row per iteration, acceptance bookkeeping per
/// proposal block, and the log-posterior trace. Burn-in rows are retained
/// in the raw trace and skipped by the summary helpers.
#[derive(Debug, Clone)]
pub struct Chain {
    names: Vec<String>,
    samples: DMatrix<f64>,
    log_posterior: Vec<f64>,
    /// Per-iteration acceptance flags, one per proposal block (one block
    /// per coordinate for Metropolis-within-Gibbs, a single joint block
    /// for full-vector Metropolis).
    accepted: Vec<Vec<bool>>,
    block_names: Vec<String>,
    burn_in: usize,
    seed: u64,
}

impl Chain {
    pub fn new(
        names: Vec<String>,
        samples: DMatrix<f64>,
        log_posterior: Vec<f64>,
        accepted: Vec<Vec<bool>>,
        block_names: Vec<String>,
        burn_in: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = samples.nrows();
        if n == 0 {
            return Err(CalError::invalid("chain must contain at least one sample"));
        }
        if names.len() != samples.ncols() {
            return Err(CalError::invalid("one name per sampled column"));
        }
        if log_posterior.len() != n || accepted.len() != n {
            return Err(CalError::invalid("per-iteration traces must align"));
        }
        if accepted.iter().any(|row| row.len() != block_names.len()) {
            return Err(CalError::invalid("one acceptance flag per block"));
        }
        if burn_in >= n {
            return Err(CalError::invalid(format!(
                "burn-in {burn_in} leaves no samples out of {n}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(CalError::numerical("chain contains non-finite samples"));
        }
        if log_posterior.iter().any(|v| v.is_nan()) {
            return Err(CalError::numerical("chain log-posterior trace contains NaN"));
        }
        Ok(Chain {
            names,
            samples,
            log_posterior,
            accepted,
            block_names,
            burn_in,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn log_posterior(&self) -> &[f64] {
        &self.log_posterior
    }

    pub fn accepted(&self) -> &[Vec<bool>] {
        &self.accepted
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fraction of accepted proposals per block, over the whole trace.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.block_names.len())
            .map(|b| self.accepted.iter().filter(|row| row[b]).count() as f64 / n)
            .collect()
    }

    /// Copies the post-burn-in rows.
    pub fn post_burn_in_samples(&self) -> DMatrix<f64> {
        let kept = self.len() - self.burn_in;
        self.samples.rows(self.burn_in, kept).into_owned()
    }

    pub fn post_burn_in_log_posterior(&self) -> &[f64] {
        &self.log_posterior[self.burn_in..]
    }

    /// Post-burn-in values of one coordinate.
    pub fn parameter_series(&self, j: usize) -> Vec<f64> {
        self.samples
            .column(j)
            .iter()
            .skip(self.burn_in)
            .copied()
            .collect()
    }

    /// Applies a per-row reparameterization, keeping acceptance bookkeeping.
    /// `f` returns the transformed row and the log-posterior adjustment to
    /// ADD to the stored trace value.
    pub fn map_samples<F>(&self, names: Vec<String>, mut f: F) -> Result<Chain>
    where
        F: FnMut(&[f64]) -> (Vec<f64>, f64),
    {
        let n = self.len();
        let mut rows = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<f64> = self.samples.row(i).iter().copied().collect();
            let (mapped, adjust) = f(&row);
            lp.push(self.log_posterior[i] + adjust);
            rows.push(mapped);
        }
        let ncols = rows[0].len();
        let samples = DMatrix::from_fn(n, ncols, |i, j| rows[i][j]);
        Chain::new(
            names,
            samples,
            lp,
            self.accepted.clone(),
            self.block_names.clone(),
            self.burn_in,
            self.seed,
        )
    }
}

fn generic_names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("p{j}")).collect()
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Single-coordinate Gaussian random-walk updates, swept in coordinate
/// order, standard Metropolis acceptance per coordinate. One sample row is
/// recorded per full sweep. The random stream is consumed identically
/// whether or not a move is accepted, so chains are reproducible and
/// invariant to constant shifts of the target.
pub fn metropolis_within_gibbs<F>(
    mut log_posterior: F,
    init: &[f64],
    proposal_sds: &[f64],
    n_iter: usize,
    seed: u64,
) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = init.len();
    if dim == 0 {
        return Err(CalError::invalid("init must be non-empty"));
    }
    if proposal_sds.len() != dim {
        return Err(CalError::invalid("one proposal sd per coordinate"));
    }
    if proposal_sds.iter().any(|s| !(*s >= 0.0)) {
        return Err(CalError::invalid("proposal sds must be non-negative"));
    }
    if n_iter == 0 {
        return Err(CalError::invalid("n_iter must be positive"));
    }
    let mut lp = sanitize(log_posterior(init));
    if !lp.is_finite() {
        return Err(CalError::invalid(
            "initial point has non-finite log-posterior",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = init.to_vec();
    let mut samples = DMatrix::zeros(n_iter, dim);
    let mut lp_trace = Vec::with_capacity(n_iter);
    let mut accepted = Vec::with_capacity(n_iter);

    for it in 0..n_iter {
        let mut row_accepted = vec![false; dim];
        for (j, flag) in row_accepted.iter_mut().enumerate() {
            let step: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let old = z[j];
            z[j] = old + proposal_sds[j] * step;
            let lp_prop = sanitize(log_posterior(&z));
            if lp_prop - lp > u.ln() {
                lp = lp_prop;
                *flag = true;
            } else {
                z[j] = old;
            }
        }
        for j in 0..dim {
            samples[(it, j)] = z[j];
        }
        lp_trace.push(lp);
        accepted.push(row_accepted);
    }

    let names = generic_names(dim);
    Chain::new(names.clone(), samples, lp_trace, accepted, names, 0, seed)
}

/// Diagonal jitter added to a proposal covariance before factorization,
/// relative to its mean diagonal (plus an absolute floor).
const PROPOSAL_JITTER_REL: f64 = 1e-9;
const PROPOSAL_JITTER_ABS: f64 = 1e-12;

/// Full-vector Gaussian random-walk Metropolis with proposal covariance
/// `scale^2 * (cov + jitter I)`. Burn-in rows stay in the raw trace and are
/// skipped by summaries.
pub fn adaptive_mh<F>(
    mut log_posterior: F,
    init: &[f64],
    cov: &DMatrix<f64>,
    scale: f64,
    n_iter: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = init.len();
    if dim == 0 {
        return Err(CalError::invalid("init must be non-empty"));
    }
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(CalError::invalid("proposal covariance must be dim x dim"));
    }
    if !(scale > 0.0) {
        return Err(CalError::invalid("proposal scale must be positive"));
    }
    if n_iter == 0 || burn_in >= n_iter {
        return Err(CalError::invalid(
            "need n_iter > burn_in >= 0 for at least one retained sample",
        ));
    }
    let mut lp = sanitize(log_posterior(init));
    if !lp.is_finite() {
        return Err(CalError::invalid(
            "initial point has non-finite log-posterior",
        ));
    }

    let mean_diag = cov.diagonal().mean();
    let jitter = PROPOSAL_JITTER_ABS + PROPOSAL_JITTER_REL * mean_diag.max(0.0);
    let mut proposal = cov * scale * scale;
    for j in 0..dim {
        proposal[(j, j)] += scale * scale * jitter;
    }
    let chol = Cholesky::new(proposal).ok_or_else(|| {
        CalError::numerical("proposal covariance is not positive definite after jitter")
    })?;
    let l = chol.l();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DVector::from_column_slice(init);
    let mut samples = DMatrix::zeros(n_iter, dim);
    let mut lp_trace = Vec::with_capacity(n_iter);
    let mut accepted = Vec::with_capacity(n_iter);

    for it in 0..n_iter {
        let eps = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let u: f64 = rng.random();
        let prop = &z + &l * eps;
        let lp_prop = sanitize(log_posterior(prop.as_slice()));
        let took = lp_prop - lp > u.ln();
        if took {
            z = prop;
            lp = lp_prop;
        }
        for j in 0..dim {
            samples[(it, j)] = z[j];
        }
        lp_trace.push(lp);
        accepted.push(vec![took]);
    }

    Chain::new(
        generic_names(dim),
        samples,
        lp_trace,
        accepted,
        vec!["joint".to_string()],
        burn_in,
        seed,
    )
}

/// Per-parameter posterior report from a chain's post-burn-in samples.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    /// Sample with the highest log-posterior.
    pub map: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Credible level of the `(lo, hi)` equal-tailed intervals.
    pub level: f64,
    /// Pairwise Pearson correlations of the samples.
    pub correlations: DMatrix<f64>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Minimum post-burn-in length accepted by [`posterior_summary`].
pub const MIN_SUMMARY_SAMPLES: usize = 100;

/// MAP, moments, equal-tailed credible intervals, and pairwise sample
/// correlations from the post-burn-in trace.
pub fn posterior_summary(chain: &Chain, level: f64) -> Result<PosteriorSummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CalError::invalid("credible level must be in (0, 1)"));
    }
    let kept = chain.len() - chain.burn_in();
    if kept < MIN_SUMMARY_SAMPLES {
        return Err(CalError::invalid(format!(
            "need at least {MIN_SUMMARY_SAMPLES} post-burn-in samples, have {kept}"
        )));
    }
    let samples = chain.post_burn_in_samples();
    let lp = chain.post_burn_in_log_posterior();
    let dim = samples.ncols();
    let n = samples.nrows();

    let map_row = lp
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite log-posterior"))
        .map(|(i, _)| i)
        .expect("non-empty");
    let map = samples.row(map_row).iter().copied().collect();

    let mut mean = Vec::with_capacity(dim);
    let mut sd = Vec::with_capacity(dim);
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for j in 0..dim {
        let col: Vec<f64> = samples.column(j).iter().copied().collect();
        let (cmin, cmax) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if cmin == cmax {
            // Constant column: report it exactly instead of accumulating
            // rounding noise through the moment formulas.
            mean.push(cmin);
            sd.push(0.0);
            lo.push(cmin);
            hi.push(cmin);
            continue;
        }
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        mean.push(m);
        sd.push(var.max(0.0).sqrt());
        let mut sorted = col;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        lo.push(quantile(&sorted, (1.0 - level) / 2.0));
        hi.push(quantile(&sorted, (1.0 + level) / 2.0));
    }

    let mut correlations = DMatrix::identity(dim, dim);
    for a in 0..dim {
        for b in (a + 1)..dim {
            let r = if sd[a] > 0.0 && sd[b] > 0.0 {
                let cov = (0..n)
                    .map(|i| (samples[(i, a)] - mean[a]) * (samples[(i, b)] - mean[b]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                (cov / (sd[a] * sd[b])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            correlations[(a, b)] = r;
            correlations[(b, a)] = r;
        }
    }

    Ok(PosteriorSummary {
        names: chain.names().to_vec(),
        map,
        mean,
        sd,
        lo,
        hi,
        level,
        correlations,
    })
}

/// Sample covariance of chain rows (denominator n-1).
pub fn sample_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let dim = samples.ncols();
    let mut cov = DMatrix::zeros(dim, dim);
    if n < 2 {
        return cov;
    }
    let mean: Vec<f64> = (0..dim).map(|j| samples.column(j).mean()).collect();
    for a in 0..dim {
        for b in a..dim {
            let c = (0..n)
                .map(|i| (samples[(i, a)] - mean[a]) * (samples[(i, b)] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64;
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    cov
}

/// Effective sample size from the initial-positive-sequence truncation of
/// the autocorrelation sum. Constant series report their full length.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let mut rho_sum = 0.0;
    for k in 1..(n / 2) {
        let acov = (0..n - k)
            .map(|i| (series[i] - mean) * (series[i + k] - mean))
            .sum::<f64>()
            / n as f64;
        let rho = acov / var;
        if rho < 0.0 {
            break;
        }
        rho_sum += rho;
    }
    (n as f64 / (1.0 + 2.0 * rho_sum)).min(n as f64)
}

/// Monte-Carlo standard error of the series mean by non-overlapping batch
/// means with sqrt(n) batches. NaN for series too short to batch.
pub fn mc_standard_error(series: &[f64]) -> f64 {
    let n = series.len();
    let b = (n as f64).sqrt().floor() as usize;
    if b < 2 || n / b < 2 {
        return f64::NAN;
    }
    let nb = n / b;
    let means: Vec<f64> = (0..nb)
        .map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (nb - 1) as f64;
    (var * b as f64 / (nb * b) as f64).sqrt()
}

/// Iteration schedule and tuning for two-phase calibration. Defaults: a
/// 3000-iteration coordinate warm-up, then 10000 full-vector iterations
/// with 3000 burn-in.
#[derive(Debug, Clone)]
pub struct McmcSettings {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Original-space starting point; prior means when absent.
    pub init: Option<Vec<f64>>,
    /// Sampling-space per-coordinate proposal sds for phase 1; derived
    /// from the priors when absent.
    pub proposal_sds: Option<Vec<f64>>,
    /// Phase-2 proposal scale; 2.38/sqrt(dim) when absent.
    pub scale: Option<f64>,
}

impl McmcSettings {
    pub fn new(seed: u64) -> Self {
        McmcSettings {
            phase1_iters: 3000,
            phase2_iters: 10000,
            burn_in: 3000,
            seed,
            init: None,
            proposal_sds: None,
            scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase1_iters < 2 {
            return Err(CalError::invalid("phase 1 needs at least 2 iterations"));
        }
        if self.burn_in >= self.phase2_iters {
            return Err(CalError::invalid("burn-in must leave phase-2 samples"));
        }
        Ok(())
    }
}

/// Bounds on derived phase-1 proposal sds in the sampling space.
const PROPOSAL_SD_MIN: f64 = 1e-3;
const PROPOSAL_SD_MAX: f64 = 1.0;
/// Proposal sd as a fraction of the prior scale.
const PROPOSAL_SD_FRACTION: f64 = 0.05;

/// Runs both phases on an arbitrary target in its own coordinate space.
/// Returns the phase-2 chain. A degenerate phase-1 covariance falls back
/// to the diagonal of the phase-1 variances (logged).
pub fn two_phase<F>(
    mut target: F,
    init: &[f64],
    proposal_sds: &[f64],
    settings: &McmcSettings,
) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    settings.validate()?;
    let dim = init.len();
    let phase1 = metropolis_within_gibbs(
        &mut target,
        init,
        proposal_sds,
        settings.phase1_iters,
        crate::seeding::child_seed(settings.seed, "phase1"),
    )?;

    let cov = sample_covariance(phase1.samples());
    let scale = settings.scale.unwrap_or(2.38 / (dim as f64).sqrt());
    let last: Vec<f64> = phase1.samples().row(phase1.len() - 1).iter().copied().collect();
    let seed2 = crate::seeding::child_seed(settings.seed, "phase2");

    match adaptive_mh(
        &mut target,
        &last,
        &cov,
        scale,
        settings.phase2_iters,
        settings.burn_in,
        seed2,
    ) {
        Ok(chain) => Ok(chain),
        Err(CalError::Numerical(msg)) => {
            log::warn!("phase-1 covariance degenerate ({msg}); falling back to its diagonal");
            let mut diag = DMatrix::zeros(dim, dim);
            for j in 0..dim {
                // Tiny floor keeps a coordinate that never moved in phase 1
                // from freezing the phase-2 proposal entirely.
                diag[(j, j)] = cov[(j, j)].max(1e-12);
            }
            adaptive_mh(
                &mut target,
                &last,
                &diag,
                scale,
                settings.phase2_iters,
                settings.burn_in,
                seed2,
            )
        }
        Err(e) => Err(e),
    }
}

/// Names, transform flags, initial point, and phase-1 proposal sds for a
/// model's sampled vector.
fn sampling_layout(
    model: &CalibModel,
    settings: &McmcSettings,
) -> Result<(Vec<String>, Vec<bool>, Vec<f64>, Vec<f64>)> {
    let mut names = model.theta_names.clone();
    names.extend(model.nuisance_names());
    let is_log: Vec<bool> = names
        .iter()
        .map(|n| CalibModel::is_positive_param(n))
        .collect();

    let init_x: Vec<f64> = match &settings.init {
        Some(v) => {
            if v.len() != names.len() {
                return Err(CalError::invalid(format!(
                    "init must have {} components, got {}",
                    names.len(),
                    v.len()
                )));
            }
            v.clone()
        }
        None => names
            .iter()
            .map(|n| {
                model.priors.get(n).map(|p| p.mean()).ok_or_else(|| {
                    CalError::invalid(format!(
                        "no prior for '{n}'; supply an explicit initial point"
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    for (name, (&x, &lg)) in names.iter().zip(init_x.iter().zip(&is_log)) {
        if lg && !(x > 0.0) {
            return Err(CalError::invalid(format!(
                "initial value for positive parameter '{name}' must be > 0, got {x}"
            )));
        }
    }

    let sds: Vec<f64> = match &settings.proposal_sds {
        Some(v) => {
            if v.len() != names.len() {
                return Err(CalError::invalid("one proposal sd per sampled parameter"));
            }
            v.clone()
        }
        None => names
            .iter()
            .zip(init_x.iter().zip(&is_log))
            .map(|(n, (&x, &lg))| {
                let prior = model.priors.get(n);
                let raw = if lg {
                    // Log coordinate: the prior's relative sd approximates
                    // the sd of the log via the delta method; fall back to
                    // a unit relative scale without a prior.
                    let rel = prior
                        .map(|p| {
                            let m = p.mean();
                            if m.abs() > 0.0 {
                                p.sd() / m.abs()
                            } else {
                                1.0
                            }
                        })
                        .unwrap_or(1.0);
                    PROPOSAL_SD_FRACTION * rel
                } else {
                    let spread = prior.map(|p| p.sd()).unwrap_or_else(|| x.abs().max(1.0));
                    PROPOSAL_SD_FRACTION * spread
                };
                raw.clamp(PROPOSAL_SD_MIN, PROPOSAL_SD_MAX)
            })
            .collect(),
    };

    Ok((names, is_log, init_x, sds))
}

/// Two-phase posterior sampling of a calibration model: coordinate warm-up,
/// covariance-shaped full-vector phase, and a summary of the phase-2 chain.
/// Samples and log-posterior values are reported on the original scale.
///
/// Parameters with a point-mass prior are held at the pinned value and
/// excluded from the proposal (a joint move that perturbed one would always
/// be rejected); they appear in the chain as constant columns.
pub fn two_phase_calibrate(
    model: &CalibModel,
    data: &FieldDataSet,
    settings: &McmcSettings,
) -> Result<(Chain, PosteriorSummary)> {
    settings.validate()?;
    let (names, is_log, mut init_x, sds) = sampling_layout(model, settings)?;
    let n_theta = model.theta_names.len();

    let pinned: Vec<Option<f64>> = names
        .iter()
        .map(|n| match model.priors.get(n) {
            Some(&Prior::Point { value }) => Some(value),
            _ => None,
        })
        .collect();
    for (x, p) in init_x.iter_mut().zip(&pinned) {
        if let Some(v) = *p {
            *x = v;
        }
    }
    let free: Vec<usize> = (0..names.len()).filter(|&j| pinned[j].is_none()).collect();
    if free.is_empty() {
        return Err(CalError::invalid(
            "every sampled parameter is pinned by a point-mass prior",
        ));
    }

    let lp0 = model.log_posterior(data, &init_x[..n_theta], &init_x[n_theta..])?;
    if !lp0.is_finite() {
        return Err(CalError::invalid(
            "initial point has non-finite log-posterior; supply a valid init",
        ));
    }

    // Expands a free-coordinate sampling-space vector to the full original-
    // space vector, returning the log-Jacobian of the exp transforms.
    let expand = |zf: &[f64]| -> (Vec<f64>, f64) {
        let mut x: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
        let mut jac = 0.0;
        for (&j, &zj) in free.iter().zip(zf) {
            x[j] = if is_log[j] {
                jac += zj;
                zj.exp()
            } else {
                zj
            };
        }
        (x, jac)
    };

    let init_z: Vec<f64> = free
        .iter()
        .map(|&j| if is_log[j] { init_x[j].ln() } else { init_x[j] })
        .collect();
    let free_sds: Vec<f64> = free.iter().map(|&j| sds[j]).collect();

    let target = |zf: &[f64]| -> f64 {
        let (x, jac) = expand(zf);
        match model.log_posterior(data, &x[..n_theta], &x[n_theta..]) {
            Ok(lp) => lp + jac,
            Err(e) => {
                log::debug!("posterior evaluation rejected: {e}");
                f64::NEG_INFINITY
            }
        }
    };

    let chain_z = two_phase(target, &init_z, &free_sds, settings)?;

    let chain = chain_z.map_samples(names, |zf| {
        let (x, jac) = expand(zf);
        (x, -jac)
    })?;

    let summary = posterior_summary(&chain, 0.90)?;
    Ok((chain, summary))
}
