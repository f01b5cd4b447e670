//! Predictive assessment: posterior and prior predictive bands, coverage and
//! error metrics, blocked cross validation, and energy accounting.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CalError, Result};
use crate::kernel::{correlation_matrix, cross_correlation, KernelSpec};
use crate::mcmc::{quantile, Chain};
use crate::models::{CalibModel, DiscrepancyContext, FieldDataSet, LikelihoodMode, Prior};
use crate::seeding::{child_seed, indexed_seed};
use crate::sim::Simulator;

/// Default number of prior draws behind a prior predictive band.
pub const DEFAULT_PRIOR_DRAWS: usize = 100;

/// Default central probability mass of a predictive band.
pub const DEFAULT_BAND_LEVEL: f64 = 0.90;

/// Seconds per day, used to group observations into day blocks.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Pointwise predictive interval with a central point prediction.
///
/// Invariant: `lower[i] <= median[i] <= upper[i]` at every point.
#[derive(Debug, Clone)]
pub struct PredictiveBand {
    lower: Vec<f64>,
    median: Vec<f64>,
    upper: Vec<f64>,
    point: Vec<f64>,
    level: f64,
}

impl PredictiveBand {
    pub fn new(
        lower: Vec<f64>,
        median: Vec<f64>,
        upper: Vec<f64>,
        point: Vec<f64>,
        level: f64,
    ) -> Result<Self> {
        let m = lower.len();
        if m == 0 {
            return Err(CalError::invalid("band must cover at least one point"));
        }
        if median.len() != m || upper.len() != m || point.len() != m {
            return Err(CalError::invalid("band component lengths disagree"));
        }
        if !(level > 0.0 && level <= 1.0) {
            return Err(CalError::invalid("band level must lie in (0, 1]"));
        }
        for i in 0..m {
            // Infinite edges are legal (a vacuous band); NaN is not.
            if lower[i].is_nan() || median[i].is_nan() || upper[i].is_nan() || point[i].is_nan() {
                return Err(CalError::invalid("band values must not be NaN"));
            }
            if !(lower[i] <= median[i] && median[i] <= upper[i]) {
                return Err(CalError::invalid(format!(
                    "band is not ordered at point {i}: {} / {} / {}",
                    lower[i], median[i], upper[i]
                )));
            }
        }
        Ok(PredictiveBand {
            lower,
            median,
            upper,
            point,
            level,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn median(&self) -> &[f64] {
        &self.median
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Point prediction (mean over predictive draws).
    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Mean interval width.
    pub fn mean_width(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .sum::<f64>()
            / self.lower.len() as f64
    }
}

/// Empirical band from a draw matrix (rows are draws, columns are points):
/// central `level` quantile interval, median, and mean per column. Level 1
/// spans the sample min and max.
pub fn band_from_draws(draws: &DMatrix<f64>, level: f64) -> Result<PredictiveBand> {
    if draws.nrows() == 0 || draws.ncols() == 0 {
        return Err(CalError::invalid("need at least one draw and one point"));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(CalError::invalid("band level must lie in (0, 1]"));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(CalError::invalid("predictive draws must be finite"));
    }
    let q_lo = (1.0 - level) / 2.0;
    let q_hi = (1.0 + level) / 2.0;
    let m = draws.ncols();
    let mut lower = Vec::with_capacity(m);
    let mut median = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut point = Vec::with_capacity(m);
    for j in 0..m {
        let mut col: Vec<f64> = draws.column(j).iter().copied().collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower.push(quantile(&col, q_lo));
        median.push(quantile(&col, 0.5));
        upper.push(quantile(&col, q_hi));
        point.push(col.iter().sum::<f64>() / col.len() as f64);
    }
    PredictiveBand::new(lower, median, upper, point, level)
}

/// Fraction of observations falling inside the band (inclusive edges).
pub fn coverage_rate(band: &PredictiveBand, y: &DVector<f64>) -> Result<f64> {
    if y.len() != band.len() {
        return Err(CalError::invalid(format!(
            "band covers {} points but {} observations given",
            band.len(),
            y.len()
        )));
    }
    let inside = y
        .iter()
        .enumerate()
        .filter(|(i, v)| band.lower[*i] <= **v && **v <= band.upper[*i])
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// Root mean squared prediction error.
pub fn rmse(predictions: &[f64], y: &DVector<f64>) -> Result<f64> {
    if predictions.is_empty() {
        return Err(CalError::invalid("rmse needs at least one prediction"));
    }
    if predictions.len() != y.len() {
        return Err(CalError::invalid(format!(
            "{} predictions but {} observations",
            predictions.len(),
            y.len()
        )));
    }
    let ss: f64 = predictions
        .iter()
        .zip(y.iter())
        .map(|(p, v)| (p - v) * (p - v))
        .sum();
    Ok((ss / predictions.len() as f64).sqrt())
}

/// Settings for posterior predictive sampling.
#[derive(Debug, Clone)]
pub struct PredictSettings {
    /// Central probability mass of the band.
    pub level: f64,
    /// Number of predictive draws.
    pub draws: usize,
    pub seed: u64,
}

impl PredictSettings {
    pub fn new(seed: u64) -> Self {
        PredictSettings {
            level: DEFAULT_BAND_LEVEL,
            draws: 1000,
            seed,
        }
    }
}

/// Per-draw parameter values pulled out of a chain row.
struct DrawParams {
    theta: Vec<f64>,
    sigma_err2: f64,
    disc: Option<(f64, f64)>,
    emulator: Option<(DVector<f64>, f64, f64)>,
}

/// Resolves chain column indices for the sampled parameters of a model.
struct ChainLayout {
    theta: Vec<usize>,
    sigma_err2: usize,
    disc: Option<(usize, usize)>,
    emulator: Option<(Vec<usize>, usize, usize)>,
}

impl ChainLayout {
    fn resolve(model: &CalibModel, chain: &Chain) -> Result<Self> {
        let names = chain.names();
        let find = |name: &str| -> Result<usize> {
            names.iter().position(|n| n == name).ok_or_else(|| {
                CalError::invalid(format!("chain has no column named '{name}'"))
            })
        };
        let mut theta = Vec::with_capacity(model.theta_names.len());
        for name in &model.theta_names {
            theta.push(find(name)?);
        }
        let sigma_err2 = find("sigma_err2")?;
        let disc = if model.variant.uses_discrepancy() {
            Some((find("sigma_delta2")?, find("psi_delta")?))
        } else {
            None
        };
        let emulator = if model.variant.uses_emulator() && model.mode == LikelihoodMode::Full {
            let em = model
                .emulator
                .as_ref()
                .ok_or_else(|| CalError::invalid("emulated variant lacks an emulator"))?;
            let dim = em.design().dim();
            let mut beta = Vec::new();
            for r in em.basis.regressors(dim) {
                beta.push(find(&format!("beta_{}", r.name()))?);
            }
            Some((beta, find("sigma_s2")?, find("psi_s")?))
        } else {
            None
        };
        Ok(ChainLayout {
            theta,
            sigma_err2,
            disc,
            emulator,
        })
    }

    fn extract(&self, chain: &Chain, row: usize) -> Result<DrawParams> {
        let s = chain.samples();
        let sigma_err2 = s[(row, self.sigma_err2)];
        if !(sigma_err2 >= 0.0) {
            return Err(CalError::invalid(
                "sampled measurement variance must be non-negative",
            ));
        }
        Ok(DrawParams {
            theta: self.theta.iter().map(|&j| s[(row, j)]).collect(),
            sigma_err2,
            disc: self.disc.map(|(a, b)| (s[(row, a)], s[(row, b)])),
            emulator: self.emulator.as_ref().map(|(beta, v, p)| {
                (
                    DVector::from_iterator(beta.len(), beta.iter().map(|&j| s[(row, j)])),
                    s[(row, *v)],
                    s[(row, *p)],
                )
            }),
        })
    }
}

/// Model prediction (code or emulator conditional mean) at raw input rows.
///
/// For emulated variants this is deliberately the plug-in conditional mean:
/// emulator predictive variance does not enter predictive draws, so emulated
/// bands reflect parameter, discrepancy, and noise uncertainty only.
fn model_mean(
    model: &CalibModel,
    rows: &[Vec<f64>],
    params: &DrawParams,
) -> Result<DVector<f64>> {
    if model.variant.uses_emulator() {
        if let Some((beta, sigma_s2, psi_s)) = &params.emulator {
            let em = model
                .emulator
                .as_ref()
                .ok_or_else(|| CalError::invalid("emulated variant lacks an emulator"))?;
            let gp = em.gp_with(beta, *sigma_s2, *psi_s)?;
            let tuples: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| em.joint_tuple(r, &params.theta))
                .collect();
            Ok(gp.posterior_mean(&tuples))
        } else {
            let plugged = model.plugged.as_ref().ok_or_else(|| {
                CalError::invalid("modular prediction needs a fitted emulator plugged in")
            })?;
            let tuples: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| plugged.context().joint_tuple(r, &params.theta))
                .collect();
            Ok(plugged.gp().posterior_mean(&tuples))
        }
    } else {
        let sim = model
            .simulator
            .as_ref()
            .ok_or_else(|| CalError::invalid("code-based variant lacks a simulator"))?;
        let mut out = DVector::zeros(rows.len());
        for (i, row) in rows.iter().enumerate() {
            out[i] = sim.run(row, &params.theta)?;
        }
        Ok(out)
    }
}

/// Discrepancy posterior given training residuals: pointwise mean and
/// marginal variance at the prediction inputs. Residuals carry measurement
/// noise, so the conditioning covariance is `S_d + sigma_err^2 I`.
fn discrepancy_conditional(
    disc: &DiscrepancyContext,
    train_norm: &[Vec<f64>],
    new_norm: &[Vec<f64>],
    residuals: &DVector<f64>,
    sigma_d2: f64,
    psi_d: f64,
    sigma_err2: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let trend_new = disc.trend(new_norm);
    if sigma_d2 == 0.0 {
        return Ok((trend_new, DVector::zeros(new_norm.len())));
    }
    if !(psi_d > 0.0) || !(sigma_d2 > 0.0) {
        return Err(CalError::invalid(
            "discrepancy variance and range must be non-negative and positive",
        ));
    }
    let kernel = KernelSpec::with_nugget(disc.family, psi_d, 1.0, 0.0)?;
    let mut c_tt = correlation_matrix(train_norm, &kernel) * sigma_d2;
    for i in 0..train_norm.len() {
        c_tt[(i, i)] += sigma_err2;
    }
    let chol = Cholesky::new(c_tt).ok_or_else(|| {
        CalError::numerical("discrepancy conditioning covariance is not positive definite")
    })?;
    let centered = residuals - disc.trend(train_norm);
    let alpha = chol.solve(&centered);
    let c_nt = cross_correlation(new_norm, train_norm, &kernel) * sigma_d2;
    let mean = trend_new + &c_nt * alpha;
    // Marginal variances only: pointwise bands do not need cross terms.
    let w = chol
        .l()
        .solve_lower_triangular(&c_nt.transpose())
        .ok_or_else(|| CalError::numerical("triangular solve failed"))?;
    let mut var = DVector::from_element(new_norm.len(), sigma_d2);
    for j in 0..new_norm.len() {
        var[j] = (var[j] - w.column(j).norm_squared()).max(0.0);
    }
    Ok((mean, var))
}

/// Posterior predictive band at new inputs.
///
/// Each retained posterior draw contributes one predicted trajectory: the
/// model prediction at the drawn parameters, plus a discrepancy value drawn
/// from its posterior given the training residuals (discrepancy variants
/// only), plus measurement noise. The band is the empirical central interval
/// across draws.
pub fn posterior_predict(
    model: &CalibModel,
    data: &FieldDataSet,
    chain: &Chain,
    x_new: &DMatrix<f64>,
    settings: &PredictSettings,
) -> Result<PredictiveBand> {
    if x_new.nrows() == 0 {
        return Err(CalError::invalid("need at least one prediction input"));
    }
    if x_new.ncols() != data.x().ncols() {
        return Err(CalError::invalid(format!(
            "prediction inputs have {} columns but field data has {}",
            x_new.ncols(),
            data.x().ncols()
        )));
    }
    if settings.draws == 0 {
        return Err(CalError::invalid("need at least one predictive draw"));
    }
    let kept = chain.len() - chain.burn_in();
    if kept == 0 {
        return Err(CalError::invalid("chain has no post-burn-in samples"));
    }
    let layout = ChainLayout::resolve(model, chain)?;

    let m = x_new.nrows();
    let new_rows: Vec<Vec<f64>> = (0..m)
        .map(|i| x_new.row(i).iter().copied().collect())
        .collect();
    let train_rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.x_row(i)).collect();
    let (train_norm, new_norm) = match &model.discrepancy {
        Some(disc) => {
            let t = disc.normalize_rows(data)?;
            let n: Vec<Vec<f64>> = new_rows.iter().map(|r| disc.normalize_row(r)).collect();
            (t, n)
        }
        None => (Vec::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(settings.seed, "predict"));
    let mut draws = DMatrix::zeros(settings.draws, m);
    for d in 0..settings.draws {
        // Evenly spaced pass through the retained samples; repeats when more
        // draws than samples are requested.
        let row = chain.burn_in() + (d * kept) / settings.draws;
        let params = layout.extract(chain, row)?;
        let mut value = model_mean(model, &new_rows, &params)?;

        if let Some(disc) = &model.discrepancy {
            let (sigma_d2, psi_d) = params.disc.ok_or_else(|| {
                CalError::invalid("discrepancy variant chain lacks discrepancy parameters")
            })?;
            let train_mean = model_mean(model, &train_rows, &params)?;
            let residuals = data.y() - train_mean;
            let (d_mean, d_var) = discrepancy_conditional(
                disc,
                &train_norm,
                &new_norm,
                &residuals,
                sigma_d2,
                psi_d,
                params.sigma_err2,
            )?;
            for i in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                value[i] += d_mean[i] + d_var[i].sqrt() * z;
            }
        }

        let noise_sd = params.sigma_err2.sqrt();
        for i in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            draws[(d, i)] = value[i] + noise_sd * z;
        }
    }
    band_from_draws(&draws, settings.level)
}

/// Prior predictive band: runs the code at parameter values drawn from the
/// priors (one prior per calibration parameter, in order) and takes the
/// empirical band. No measurement noise enters; the band shows parametric
/// uncertainty pushed through the code.
pub fn prior_predictive_band(
    simulator: &dyn Simulator,
    priors: &[Prior],
    x: &DMatrix<f64>,
    n_draws: usize,
    level: f64,
    seed: u64,
) -> Result<PredictiveBand> {
    if priors.is_empty() {
        return Err(CalError::invalid("need at least one prior"));
    }
    if n_draws == 0 {
        return Err(CalError::invalid("need at least one prior draw"));
    }
    if x.nrows() == 0 {
        return Err(CalError::invalid("need at least one prediction input"));
    }
    for p in priors {
        p.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "prior-predict"));
    let mut draws = DMatrix::zeros(n_draws, x.nrows());
    for d in 0..n_draws {
        let theta: Vec<f64> = priors.iter().map(|p| p.draw(&mut rng)).collect();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            draws[(d, i)] = simulator.run(&row, &theta)?;
        }
    }
    band_from_draws(&draws, level)
}

/// One cross-validation replicate: which block was held out and how the
/// refitted model predicted it.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub start_day: i64,
    pub coverage: f64,
    pub rmse: f64,
}

/// Aggregate of a blocked cross-validation run.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Mean coverage across replicates, in [0, 1].
    pub coverage: f64,
    /// Mean root mean squared error across replicates, non-negative.
    pub rmse: f64,
    pub level: f64,
    pub replicates: Vec<ReplicateOutcome>,
}

impl ValidationReport {
    fn from_replicates(replicates: Vec<ReplicateOutcome>, level: f64) -> Result<Self> {
        if replicates.is_empty() {
            return Err(CalError::invalid("validation needs at least one replicate"));
        }
        let n = replicates.len() as f64;
        let coverage = replicates.iter().map(|r| r.coverage).sum::<f64>() / n;
        let rmse = replicates.iter().map(|r| r.rmse).sum::<f64>() / n;
        if !(0.0..=1.0).contains(&coverage) || !(rmse >= 0.0) {
            return Err(CalError::numerical("validation aggregates out of range"));
        }
        Ok(ValidationReport {
            coverage,
            rmse,
            level,
            replicates,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }
}

/// Settings for blocked cross validation.
#[derive(Debug, Clone)]
pub struct CvSettings {
    pub n_reps: usize,
    /// Length of each held-out block in consecutive days.
    pub holdout_days: i64,
    pub level: f64,
    pub seed: u64,
    /// Column of the field-data inputs holding the timestamp in seconds.
    pub time_column: usize,
}

impl CvSettings {
    pub fn new(seed: u64) -> Self {
        CvSettings {
            n_reps: 100,
            holdout_days: 3,
            level: DEFAULT_BAND_LEVEL,
            seed,
            time_column: 0,
        }
    }
}

/// Day index of a timestamp in seconds.
pub fn day_index(t_seconds: f64) -> i64 {
    (t_seconds / SECONDS_PER_DAY).floor() as i64
}

/// Start days from which `holdout` consecutive observed days are available.
fn block_starts(days: &[i64], holdout: i64) -> Vec<i64> {
    let distinct: std::collections::BTreeSet<i64> = days.iter().copied().collect();
    distinct
        .iter()
        .copied()
        .filter(|&d| (0..holdout).all(|k| distinct.contains(&(d + k))))
        .collect()
}

/// Splits a dataset into (train, test) by holding out the observations whose
/// day index falls in `[start_day, start_day + n_days)`.
pub fn split_consecutive_days(
    data: &FieldDataSet,
    time_column: usize,
    start_day: i64,
    n_days: i64,
) -> Result<(FieldDataSet, FieldDataSet)> {
    if time_column >= data.x().ncols() {
        return Err(CalError::invalid("time column out of range"));
    }
    if n_days <= 0 {
        return Err(CalError::invalid("holdout must span at least one day"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..data.n() {
        let day = day_index(data.x()[(i, time_column)]);
        if day >= start_day && day < start_day + n_days {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    if test.is_empty() {
        return Err(CalError::invalid("holdout block contains no observations"));
    }
    if train.is_empty() {
        return Err(CalError::invalid("holdout block would consume all data"));
    }
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Blocked cross validation: each replicate removes a random block of
/// consecutive days, refits on the rest via `fit_predict`, and scores the
/// predictive band on the held-out block. Replicates run in parallel, each
/// on its own derived seed, so results do not depend on scheduling.
///
/// `fit_predict(train, test, seed)` must return a band with one entry per
/// test row; its `point()` values feed the error metric.
pub fn cross_validate<F>(
    data: &FieldDataSet,
    settings: &CvSettings,
    fit_predict: F,
) -> Result<ValidationReport>
where
    F: Fn(&FieldDataSet, &FieldDataSet, u64) -> Result<PredictiveBand> + Sync,
{
    if settings.n_reps == 0 {
        return Err(CalError::invalid("need at least one replicate"));
    }
    if settings.time_column >= data.x().ncols() {
        return Err(CalError::invalid("time column out of range"));
    }
    if !(settings.level > 0.0 && settings.level <= 1.0) {
        return Err(CalError::invalid("band level must lie in (0, 1]"));
    }
    let days: Vec<i64> = (0..data.n())
        .map(|i| day_index(data.x()[(i, settings.time_column)]))
        .collect();
    let distinct: std::collections::BTreeSet<i64> = days.iter().copied().collect();
    if (distinct.len() as i64) < settings.holdout_days + 1 {
        return Err(CalError::data(format!(
            "need more than {} observed days to hold {} out",
            settings.holdout_days, settings.holdout_days
        )));
    }
    let starts = block_starts(&days, settings.holdout_days);
    if starts.is_empty() {
        return Err(CalError::data(
            "no run of consecutive observed days is long enough to hold out",
        ));
    }

    let replicates: Vec<ReplicateOutcome> = (0..settings.n_reps)
        .into_par_iter()
        .map(|k| {
            let rep_seed = indexed_seed(settings.seed, "cv-rep", k);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            let start_day = starts[rng.random_range(0..starts.len())];
            let (train, test) =
                split_consecutive_days(data, settings.time_column, start_day, settings.holdout_days)?;
            let band = fit_predict(&train, &test, rep_seed)?;
            if band.len() != test.n() {
                return Err(CalError::invalid(format!(
                    "replicate {k}: band covers {} points but block has {}",
                    band.len(),
                    test.n()
                )));
            }
            Ok(ReplicateOutcome {
                replicate: k,
                start_day,
                coverage: coverage_rate(&band, test.y())?,
                rmse: rmse(band.point(), test.y())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ValidationReport::from_replicates(replicates, settings.level)
}

/// Energy produced over a uniformly sampled power trace, in kilowatt hours:
/// rectangle rule `sum(P) * dt / 3.6e6` with power in watts and the timestep
/// in seconds.
pub fn energy_integral(power_w: &[f64], timestep_s: f64) -> Result<f64> {
    if !(timestep_s > 0.0) || !timestep_s.is_finite() {
        return Err(CalError::invalid("timestep must be positive and finite"));
    }
    if power_w.iter().any(|p| !p.is_finite()) {
        return Err(CalError::invalid("power values must be finite"));
    }
    Ok(power_w.iter().sum::<f64>() * timestep_s / 3.6e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Design;
    use crate::gp::BasisSpec;
    use crate::kernel::KernelFamily;
    use crate::models::{EmulatorContext, PluggedEmulator, PriorSpec};
    use crate::sim::FnSimulator;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn chain_of_rows(names: Vec<&str>, rows: Vec<Vec<f64>>, burn_in: usize) -> Chain {
        let dim = rows[0].len();
        let n = rows.len();
        let samples = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        Chain::new(
            names.into_iter().map(String::from).collect(),
            samples,
            vec![0.0; n],
            vec![vec![true]; n],
            vec!["all".to_string()],
            burn_in,
            7,
        )
        .unwrap()
    }

    fn hourly_dataset(n_days: usize, f: impl Fn(f64) -> f64) -> FieldDataSet {
        let n = n_days * 24;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                i as f64 * 3600.0
            } else {
                (i % 24) as f64 / 23.0
            }
        });
        let y = DVector::from_fn(n, |i, _| f(x[(i, 1)]));
        FieldDataSet::new(vec!["t".into(), "s".into()], x, y).unwrap()
    }

    #[test]
    fn band_quantiles_are_ordered_and_level_one_spans_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = DMatrix::from_fn(40, 6, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let band = band_from_draws(&draws, 0.8).unwrap();
        for j in 0..band.len() {
            assert!(band.lower()[j] <= band.median()[j]);
            assert!(band.median()[j] <= band.upper()[j]);
        }
        let full = band_from_draws(&draws, 1.0).unwrap();
        for j in 0..6 {
            let col: Vec<f64> = draws.column(j).iter().copied().collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(full.lower()[j], lo);
            assert_eq!(full.upper()[j], hi);
        }
    }

    #[test]
    fn constant_chain_with_zero_noise_collapses_band_to_code_output() {
        let sim = Arc::new(FnSimulator(|x: &[f64], t: &[f64]| Ok(t[0] * x[1])));
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            Prior::Gaussian {
                mean: 2.0,
                variance: 1.0,
            },
        )])
        .unwrap();
        let model = CalibModel::m1(sim, vec!["theta".into()], priors).unwrap();
        let data = hourly_dataset(1, |s| 2.0 * s);
        let chain = chain_of_rows(
            vec!["theta", "sigma_err2"],
            vec![vec![2.0, 0.0]; 30],
            10,
        );
        let x_new = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 0.0, 0.5, 0.0, 0.9]);
        let band = posterior_predict(
            &model,
            &data,
            &chain,
            &x_new,
            &PredictSettings::new(3),
        )
        .unwrap();
        for (i, s) in [0.1, 0.5, 0.9].iter().enumerate() {
            assert_relative_eq!(band.lower()[i], 2.0 * s, epsilon = 1e-12);
            assert_relative_eq!(band.upper()[i], 2.0 * s, epsilon = 1e-12);
            assert_relative_eq!(band.point()[i], 2.0 * s, epsilon = 1e-12);
            assert!(band.upper()[i] - band.lower()[i] <= 1e-12);
        }
    }

    #[test]
    fn coverage_counts_inclusive_edges() {
        let band = PredictiveBand::new(
            vec![0.0; 10],
            vec![0.5; 10],
            vec![1.0; 10],
            vec![0.5; 10],
            0.9,
        )
        .unwrap();
        let mut y = DVector::from_element(10, 0.5);
        y[3] = 2.0;
        assert_relative_eq!(coverage_rate(&band, &y).unwrap(), 0.9);
        let vacuous = PredictiveBand::new(
            vec![f64::NEG_INFINITY; 10],
            vec![0.0; 10],
            vec![f64::INFINITY; 10],
            vec![0.0; 10],
            0.9,
        )
        .unwrap();
        assert_eq!(coverage_rate(&vacuous, &y).unwrap(), 1.0);
        let short = DVector::from_element(4, 0.5);
        assert!(coverage_rate(&band, &short).is_err());
    }

    #[test]
    fn rmse_matches_hand_value_and_ignores_ordering() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let pred = vec![4.0, 6.0];
        assert_relative_eq!(rmse(&pred, &y).unwrap(), 12.5_f64.sqrt(), epsilon = 1e-12);
        let y_perm = DVector::from_vec(vec![2.0, 1.0]);
        let pred_perm = vec![6.0, 4.0];
        assert_relative_eq!(
            rmse(&pred_perm, &y_perm).unwrap(),
            rmse(&pred, &y).unwrap(),
            epsilon = 1e-15
        );
        assert!(rmse(&pred, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn coverage_is_monotone_in_level_for_nested_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let draws = DMatrix::from_fn(60, 8, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let y = DVector::from_fn(8, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let narrow = band_from_draws(&draws, 0.5).unwrap();
            let wide = band_from_draws(&draws, 0.95).unwrap();
            assert!(
                coverage_rate(&narrow, &y).unwrap() <= coverage_rate(&wide, &y).unwrap()
            );
        }
    }

    #[test]
    fn point_mass_priors_give_zero_width_prior_band() {
        let sim = FnSimulator(|x: &[f64], t: &[f64]| Ok(t[0] * x[0] + t[1]));
        let priors = [Prior::Point { value: 2.0 }, Prior::Point { value: -1.0 }];
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let band = prior_predictive_band(&sim, &priors, &x, 50, 0.9, 5).unwrap();
        for i in 0..4 {
            assert_eq!(band.lower()[i], band.upper()[i]);
            assert_eq!(band.lower()[i], 2.0 * x[(i, 0)] - 1.0);
        }
    }

    #[test]
    fn wider_priors_widen_the_prior_band() {
        let sim = FnSimulator(|x: &[f64], t: &[f64]| Ok(t[0] * x[0]));
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let narrow = prior_predictive_band(
            &sim,
            &[Prior::Gaussian {
                mean: 1.0,
                variance: 0.25,
            }],
            &x,
            400,
            0.9,
            5,
        )
        .unwrap();
        let wide = prior_predictive_band(
            &sim,
            &[Prior::Gaussian {
                mean: 1.0,
                variance: 1.0,
            }],
            &x,
            400,
            0.9,
            5,
        )
        .unwrap();
        assert!(wide.mean_width() > narrow.mean_width());
    }

    #[test]
    fn energy_integral_examples() {
        assert_relative_eq!(energy_integral(&[1000.0], 3600.0).unwrap(), 1.0);
        assert!(energy_integral(&[100.0], -1.0).is_err());
        assert!(energy_integral(&[f64::NAN], 1.0).is_err());

        // On a smooth bell-shaped day profile the rectangle rule stays within
        // a couple of percent of the trapezoid rule.
        let dt = 3600.0;
        let power: Vec<f64> = (0..=12)
            .map(|h| 1000.0 * (-((h as f64 - 6.0) / 2.0).powi(2)).exp())
            .collect();
        let rect = energy_integral(&power, dt).unwrap();
        let trap = (power.iter().sum::<f64>() - 0.5 * (power[0] + power[12])) * dt / 3.6e6;
        assert!((rect - trap).abs() / trap < 0.02);
    }

    #[test]
    fn day_split_partitions_rows() {
        let data = hourly_dataset(5, |s| s);
        let (train, test) = split_consecutive_days(&data, 0, 1, 3).unwrap();
        assert_eq!(test.n(), 72);
        assert_eq!(train.n(), 48);
        for i in 0..test.n() {
            let d = day_index(test.x()[(i, 0)]);
            assert!((1..4).contains(&d));
        }
        for i in 0..train.n() {
            let d = day_index(train.x()[(i, 0)]);
            assert!(d == 0 || d == 4);
        }
        assert!(split_consecutive_days(&data, 0, 40, 3).is_err());
        assert!(split_consecutive_days(&data, 0, 0, 5).is_err());
    }

    #[test]
    fn cross_validation_scores_a_perfect_model_perfectly() {
        let data = hourly_dataset(5, |s| 3.0 * s + 1.0);
        let mut settings = CvSettings::new(17);
        settings.n_reps = 4;
        let report = cross_validate(&data, &settings, |_train, test, _seed| {
            let exact: Vec<f64> = test.y().iter().copied().collect();
            PredictiveBand::new(exact.clone(), exact.clone(), exact.clone(), exact, 0.9)
        })
        .unwrap();
        assert_eq!(report.n_replicates(), 4);
        assert_eq!(report.coverage, 1.0);
        assert_relative_eq!(report.rmse, 0.0);

        let rerun = cross_validate(&data, &settings, |_train, test, _seed| {
            let exact: Vec<f64> = test.y().iter().copied().collect();
            PredictiveBand::new(exact.clone(), exact.clone(), exact.clone(), exact, 0.9)
        })
        .unwrap();
        for (a, b) in report.replicates.iter().zip(&rerun.replicates) {
            assert_eq!(a.start_day, b.start_day);
        }
    }

    #[test]
    fn cross_validation_requires_enough_days() {
        let data = hourly_dataset(3, |s| s);
        let settings = CvSettings::new(1);
        assert!(cross_validate(&data, &settings, |_, test, _| {
            let v: Vec<f64> = test.y().iter().copied().collect();
            PredictiveBand::new(v.clone(), v.clone(), v.clone(), v, 0.9)
        })
        .is_err());
    }

    #[test]
    fn discrepancy_conditioning_recovers_a_smooth_residual_field() {
        // Code is identically zero, so the field data IS the discrepancy.
        let sim = Arc::new(FnSimulator(|_x: &[f64], t: &[f64]| Ok(0.0 * t[0])));
        let data = hourly_dataset(1, |s| (2.0 * std::f64::consts::PI * s).sin());
        let disc = DiscrepancyContext::from_data(&data, vec![1], KernelFamily::Matern52).unwrap();
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            Prior::Gaussian {
                mean: 0.0,
                variance: 1.0,
            },
        )])
        .unwrap();
        let model = CalibModel::m3(sim, disc, vec!["theta".into()], priors).unwrap();
        let chain = chain_of_rows(
            vec!["theta", "sigma_delta2", "psi_delta", "sigma_err2"],
            vec![vec![0.0, 1.0, 0.3, 1e-8]; 20],
            5,
        );
        let mut settings = PredictSettings::new(9);
        settings.draws = 200;
        let band = posterior_predict(&model, &data, &chain, data.x(), &settings).unwrap();
        for i in 0..data.n() {
            assert_relative_eq!(band.median()[i], data.y()[i], epsilon = 2e-3);
        }
    }

    #[test]
    fn emulated_prediction_uses_conditional_mean_without_emulator_variance() {
        let mut points = Vec::new();
        let mut runs = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let s = i as f64 / 5.0;
                let t = j as f64 / 5.0;
                points.push(vec![s, t]);
                runs.push(s + t);
            }
        }
        let provenance = vec![crate::design::Provenance::Initial; points.len()];
        let design = Design::new(points, 1, 1, provenance, vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let em = EmulatorContext::new(
            design,
            DVector::from_vec(runs),
            KernelFamily::Matern52,
            BasisSpec::Constant,
            1e-8,
            vec![1],
        )
        .unwrap();
        let plugged = PluggedEmulator::fit(em, 4, 13).unwrap();
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            Prior::Uniform { lo: 0.0, hi: 1.0 },
        )])
        .unwrap();
        let model = CalibModel::m2(plugged.context().clone(), vec!["theta".into()], priors)
            .unwrap()
            .with_plugged(plugged);
        let data = hourly_dataset(1, |s| s + 0.3);
        let chain = chain_of_rows(
            vec!["theta", "sigma_err2"],
            vec![vec![0.3, 0.0]; 12],
            4,
        );
        // Query away from design points, where emulator predictive variance
        // would be visibly positive if it were included.
        let x_new = DMatrix::from_row_slice(2, 2, &[0.0, 0.37, 0.0, 0.81]);
        let band = posterior_predict(
            &model,
            &data,
            &chain,
            &x_new,
            &PredictSettings::new(4),
        )
        .unwrap();
        for (i, s) in [0.37, 0.81].iter().enumerate() {
            assert_eq!(band.lower()[i], band.upper()[i]);
            assert_relative_eq!(band.point()[i], s + 0.3, epsilon = 1e-3);
        }
    }
}
