//! Calibration estimators built on the model likelihoods: modularized
//! Bayesian sampling, maximum likelihood (joint and separated), and
//! two-step least squares with a nonparametric residual regression.

use nalgebra::DVector;

use crate::error::{CalError, Result};
use crate::gp::GpModel;
use crate::mcmc::{two_phase_calibrate, Chain, McmcSettings, PosteriorSummary};
use crate::models::{CalibModel, FieldDataSet, LikelihoodMode, ModelVariant, PluggedEmulator, Prior};
use crate::optim::{nelder_mead, NmOptions};
use crate::seeding::{child_seed, indexed_seed};
use crate::sim::Simulator;

/// Settings for modularized calibration: emulator fitting, its
/// cross-validation gate, and the posterior sampling schedule.
#[derive(Debug, Clone)]
pub struct ModularSettings {
    pub mcmc: McmcSettings,
    /// Restarts of the emulator hyperparameter search.
    pub n_restarts: usize,
    /// Folds of the emulator cross-validation gate.
    pub cv_folds: usize,
    /// Minimum acceptable cross-validation Q^2; below this the emulator is
    /// rejected and calibration aborts.
    pub q2_threshold: f64,
}

impl ModularSettings {
    pub fn new(seed: u64) -> Self {
        ModularSettings {
            mcmc: McmcSettings::new(seed),
            n_restarts: 8,
            cv_folds: 5,
            q2_threshold: 0.5,
        }
    }
}

/// K-fold cross-validation Q^2 of a fitted emulator over its own design.
/// Hyperparameters and trend coefficients stay plugged; each fold's rows
/// are predicted from a model conditioned on the remaining rows only.
pub fn emulator_cv_q2(plugged: &PluggedEmulator, folds: usize) -> Result<f64> {
    gp_cv_q2(plugged.gp(), folds)
}

/// The same fold scheme on a bare model, over its own training set.
pub fn gp_cv_q2(gp: &GpModel, folds: usize) -> Result<f64> {
    let n = gp.design().len();
    if folds < 2 || folds > n {
        return Err(CalError::invalid(format!(
            "need 2 <= folds <= {n}, got {folds}"
        )));
    }
    let points = gp.design();
    let y = gp.outputs();

    let mut predicted = DVector::zeros(n);
    for fold in 0..folds {
        let holdout: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let train_points: Vec<Vec<f64>> = train.iter().map(|&i| points[i].clone()).collect();
        let train_y = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let sub = GpModel::new(
            gp.mean().clone(),
            gp.kernel().clone(),
            train_points,
            train_y,
        )?;
        let holdout_points: Vec<Vec<f64>> = holdout.iter().map(|&i| points[i].clone()).collect();
        let mu = sub.posterior_mean(&holdout_points);
        for (k, &i) in holdout.iter().enumerate() {
            predicted[i] = mu[k];
        }
    }
    let ybar = y.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    if sst == 0.0 {
        return Err(CalError::invalid(
            "design outputs are constant; cross-validation Q^2 is undefined",
        ));
    }
    let sse: f64 = (y - &predicted).iter().map(|e| e * e).sum();
    Ok(1.0 - sse / sst)
}

/// Modularized Bayesian calibration of an emulated variant: step one fits
/// the emulator to the design runs alone (the field data cannot influence
/// it), step two samples the posterior with those hyperparameters plugged
/// into the conditional likelihood.
pub fn modular_calibrate(
    model: &CalibModel,
    data: &FieldDataSet,
    settings: &ModularSettings,
) -> Result<(Chain, PosteriorSummary, PluggedEmulator)> {
    if !model.variant.uses_emulator() {
        return Err(CalError::invalid(format!(
            "modular calibration applies to emulated variants, not {}",
            model.variant
        )));
    }
    if model.mode != LikelihoodMode::Modular {
        return Err(CalError::invalid(
            "model is in full-likelihood mode; modular calibration plugs hyperparameters in",
        ));
    }
    let em = model
        .emulator
        .as_ref()
        .expect("emulated variant carries a context")
        .clone();
    let plugged = PluggedEmulator::fit(
        em,
        settings.n_restarts,
        child_seed(settings.mcmc.seed, "emulate"),
    )?;
    let q2 = emulator_cv_q2(&plugged, settings.cv_folds.min(plugged.context().design().len()))?;
    if !(q2 >= settings.q2_threshold) {
        return Err(CalError::numerical(format!(
            "emulator rejected: cross-validation Q^2 = {q2:.4} is below {:.4}; \
             enlarge the design or revisit the kernel",
            settings.q2_threshold
        )));
    }
    let bound = model.clone().with_plugged(plugged.clone());
    let (chain, summary) = two_phase_calibrate(&bound, data, &settings.mcmc)?;
    Ok((chain, summary, plugged))
}

/// Multistart local-search settings for the likelihood maximizers.
#[derive(Debug, Clone)]
pub struct MleSettings {
    pub n_starts: usize,
    pub seed: u64,
    /// Original-space search box per sampled parameter; derived from the
    /// priors (or data moments) when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub max_evals: usize,
}

impl MleSettings {
    pub fn new(seed: u64) -> Self {
        MleSettings {
            n_starts: 8,
            seed,
            bounds: None,
            max_evals: 2000,
        }
    }
}

/// A likelihood maximum found by multistart local search.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
}

impl MleFit {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Search box for one parameter: prior-derived when a prior exists, else a
/// data-driven heuristic keyed by the parameter's role.
fn search_bounds(
    model: &CalibModel,
    data: &FieldDataSet,
    name: &str,
    positive: bool,
) -> Result<(f64, f64)> {
    if let Some(p) = model.priors.get(name) {
        let (lo, hi) = match p {
            Prior::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                (mean - 3.0 * s, mean + 3.0 * s)
            }
            Prior::Uniform { lo, hi } => (*lo, *hi),
            Prior::Gamma { shape, scale } => {
                let mean = shape * scale;
                (mean * 1e-3, mean * 1e3)
            }
            Prior::Point { value } => {
                return Err(CalError::invalid(format!(
                    "'{name}' is pinned at {value} by a point prior; exclude it from the search"
                )));
            }
        };
        if positive {
            return Ok((lo.max(1e-12), hi.max(1e-6)));
        }
        return Ok((lo, hi));
    }
    let y: Vec<f64> = data.y().iter().copied().collect();
    let var_y = sample_sd(&y).powi(2).max(1e-12);
    let (yc_mean, yc_sd) = match &model.emulator {
        Some(em) => {
            let yc: Vec<f64> = em.y_c().iter().copied().collect();
            (yc.iter().sum::<f64>() / yc.len() as f64, sample_sd(&yc))
        }
        None => (0.0, 0.0),
    };
    match name {
        "sigma_err2" | "sigma_delta2" => Ok((1e-6 * var_y, 10.0 * var_y)),
        "sigma_s2" => {
            let v = yc_sd.powi(2).max(1e-12);
            Ok((1e-3 * v, 1e3 * v))
        }
        "psi_s" | "psi_delta" => Ok((1e-2, 10.0)),
        _ if name.starts_with("beta_") => {
            let w = (5.0 * yc_sd).max(1.0);
            if name == "beta_const" {
                Ok((yc_mean - w, yc_mean + w))
            } else {
                Ok((-w, w))
            }
        }
        _ => Err(CalError::invalid(format!(
            "no prior and no built-in search box for '{name}'; supply bounds"
        ))),
    }
}

/// Maximizes a log likelihood over named parameters by multistart
/// Nelder-Mead, positive parameters searched on the log scale. Start `i`
/// depends only on `(seed, i)`, so growing the start count keeps earlier
/// starts and the best objective is non-decreasing in it.
fn multistart_maximize<F>(
    mut loglik: F,
    names: &[String],
    bounds: &[(f64, f64)],
    is_log: &[bool],
    settings: &MleSettings,
) -> Result<MleFit>
where
    F: FnMut(&[f64]) -> f64,
{
    use rand::Rng;
    use rand::SeedableRng;

    let dim = names.len();
    for (name, (lo, hi)) in names.iter().zip(bounds) {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CalError::invalid(format!("bad search box for '{name}'")));
        }
    }
    let zlo: Vec<f64> = bounds
        .iter()
        .zip(is_log)
        .map(|((lo, _), &lg)| if lg { lo.ln() } else { *lo })
        .collect();
    let zhi: Vec<f64> = bounds
        .iter()
        .zip(is_log)
        .map(|((_, hi), &lg)| if lg { hi.ln() } else { *hi })
        .collect();

    let untransform = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(is_log)
            .map(|(&v, &lg)| if lg { v.exp() } else { v })
            .collect()
    };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in 0..settings.n_starts.max(1) {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(indexed_seed(settings.seed, "start", s));
        let z0: Vec<f64> = (0..dim)
            .map(|j| zlo[j] + (zhi[j] - zlo[j]) * rng.random::<f64>())
            .collect();
        let steps: Vec<f64> = (0..dim).map(|j| 0.1 * (zhi[j] - zlo[j])).collect();
        let opts = NmOptions {
            max_evals: settings.max_evals,
            ..NmOptions::default()
        };
        let result = nelder_mead(
            |z| {
                let x = untransform(z);
                -loglik(&x)
            },
            &z0,
            &steps,
            opts,
        );
        let better = match &best {
            None => true,
            Some((_, f, _)) => result.f < *f,
        };
        if better {
            best = Some((result.x.clone(), result.f, result.converged));
        }
    }
    let (z, f, converged) = best.expect("at least one start");
    if !converged {
        log::warn!("likelihood maximization did not converge; reporting best found");
    }
    Ok(MleFit {
        names: names.to_vec(),
        values: untransform(&z),
        log_likelihood: -f,
        converged,
    })
}

/// Joint maximum likelihood over calibration parameters and nuisance.
/// Applies to the direct-code variant and to the emulated variant without
/// discrepancy, where the joint density of field data and design runs is
/// maximized over trend, kernel, and noise parameters together.
pub fn full_mle(model: &CalibModel, data: &FieldDataSet, settings: &MleSettings) -> Result<MleFit> {
    let working = match model.variant {
        ModelVariant::M1 => model.clone(),
        ModelVariant::M2 => match model.mode {
            LikelihoodMode::Full => model.clone(),
            LikelihoodMode::Modular => model.clone().with_full_likelihood()?,
        },
        other => {
            return Err(CalError::invalid(format!(
                "joint maximum likelihood covers m1 and m2, not {other}"
            )))
        }
    };
    let mut names = working.theta_names.clone();
    names.extend(working.nuisance_names());
    let is_log: Vec<bool> = names
        .iter()
        .map(|n| CalibModel::is_positive_param(n))
        .collect();
    let bounds = match &settings.bounds {
        Some(b) => {
            if b.len() != names.len() {
                return Err(CalError::invalid("one bound pair per parameter"));
            }
            b.clone()
        }
        None => names
            .iter()
            .zip(&is_log)
            .map(|(n, &lg)| search_bounds(&working, data, n, lg))
            .collect::<Result<Vec<_>>>()?,
    };
    let n_theta = working.theta_names.len();
    multistart_maximize(
        |x| {
            working
                .log_likelihood(data, &x[..n_theta], &x[n_theta..])
                .unwrap_or(f64::NEG_INFINITY)
        },
        &names,
        &bounds,
        &is_log,
        settings,
    )
}

/// Settings for separated maximum likelihood: emulator fit restarts plus
/// the step-two maximizer settings.
#[derive(Debug, Clone)]
pub struct SmleSettings {
    pub mle: MleSettings,
    pub n_restarts: usize,
}

impl SmleSettings {
    pub fn new(seed: u64) -> Self {
        SmleSettings {
            mle: MleSettings::new(seed),
            n_restarts: 8,
        }
    }
}

/// Separated maximum likelihood for the emulated variant without
/// discrepancy: step one fits the emulator exactly as modular calibration
/// does; step two maximizes (rather than samples) the plugged conditional
/// likelihood over calibration parameters and noise variance.
pub fn smle(
    model: &CalibModel,
    data: &FieldDataSet,
    settings: &SmleSettings,
) -> Result<(MleFit, PluggedEmulator)> {
    if model.variant != ModelVariant::M2 {
        return Err(CalError::invalid(format!(
            "separated maximum likelihood covers m2, not {}",
            model.variant
        )));
    }
    let em = model
        .emulator
        .as_ref()
        .expect("emulated variant carries a context")
        .clone();
    let plugged = PluggedEmulator::fit(
        em,
        settings.n_restarts,
        child_seed(settings.mle.seed, "emulate"),
    )?;
    let bound = model.clone().with_plugged(plugged.clone());
    let mut names = bound.theta_names.clone();
    names.extend(bound.nuisance_names());
    let is_log: Vec<bool> = names
        .iter()
        .map(|n| CalibModel::is_positive_param(n))
        .collect();
    let bounds = match &settings.mle.bounds {
        Some(b) => {
            if b.len() != names.len() {
                return Err(CalError::invalid("one bound pair per parameter"));
            }
            b.clone()
        }
        None => names
            .iter()
            .zip(&is_log)
            .map(|(n, &lg)| search_bounds(&bound, data, n, lg))
            .collect::<Result<Vec<_>>>()?,
    };
    let n_theta = bound.theta_names.len();
    let fit = multistart_maximize(
        |x| {
            bound
                .log_likelihood(data, &x[..n_theta], &x[n_theta..])
                .unwrap_or(f64::NEG_INFINITY)
        },
        &names,
        &bounds,
        &is_log,
        &settings.mle,
    )?;
    Ok((fit, plugged))
}

/// Nadaraya-Watson regression with an isotropic Gaussian kernel over
/// inputs normalized to their observed extent; bandwidth chosen by
/// leave-one-out cross-validation on a log-spaced grid.
#[derive(Debug, Clone)]
pub struct NwRegressor {
    x_norm: Vec<Vec<f64>>,
    values: Vec<f64>,
    bandwidth: f64,
    var_columns: Vec<usize>,
    bounds: Vec<(f64, f64)>,
}

/// Bandwidth grid in normalized-input units.
const NW_BANDWIDTH_GRID: (f64, f64, usize) = (0.01, 1.0, 25);

impl NwRegressor {
    pub fn fit(data: &FieldDataSet, var_columns: &[usize], values: &[f64]) -> Result<Self> {
        let n = data.n();
        if values.len() != n {
            return Err(CalError::invalid("one value per data row"));
        }
        if n < 3 {
            return Err(CalError::invalid(
                "leave-one-out bandwidth selection needs at least 3 rows",
            ));
        }
        if var_columns.is_empty() || var_columns.iter().any(|&c| c >= data.x().ncols()) {
            return Err(CalError::invalid("regression columns out of range"));
        }
        let bounds = data.column_bounds(var_columns);
        let x_norm: Vec<Vec<f64>> = (0..n)
            .map(|i| Self::normalize(&data.x_row(i), var_columns, &bounds))
            .collect();

        let (b_lo, b_hi, b_n) = NW_BANDWIDTH_GRID;
        let mut best = (b_lo, f64::INFINITY);
        for k in 0..b_n {
            let h = b_lo * (b_hi / b_lo).powf(k as f64 / (b_n - 1) as f64);
            let mut sse = 0.0;
            for i in 0..n {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let d2: f64 = x_norm[i]
                        .iter()
                        .zip(&x_norm[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    let w = (-d2 / (2.0 * h * h)).exp();
                    num += w * values[j];
                    den += w;
                }
                let pred = if den > 1e-300 {
                    num / den
                } else {
                    // All leave-one-out weights vanished: fall back to the
                    // global mean, the wide-bandwidth limit.
                    values.iter().sum::<f64>() / n as f64
                };
                sse += (values[i] - pred).powi(2);
            }
            if sse < best.1 {
                best = (h, sse);
            }
        }

        Ok(NwRegressor {
            x_norm,
            values: values.to_vec(),
            bandwidth: best.0,
            var_columns: var_columns.to_vec(),
            bounds,
        })
    }

    fn normalize(x_row: &[f64], var_columns: &[usize], bounds: &[(f64, f64)]) -> Vec<f64> {
        var_columns
            .iter()
            .zip(bounds)
            .map(|(&c, (lo, hi))| {
                if hi > lo {
                    (x_row[c] - lo) / (hi - lo)
                } else {
                    0.5
                }
            })
            .collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Smoothed value at a raw input row.
    pub fn predict_row(&self, x_row: &[f64]) -> f64 {
        let q = Self::normalize(x_row, &self.var_columns, &self.bounds);
        let h = self.bandwidth;
        let mut num = 0.0;
        let mut den = 0.0;
        for (xi, &v) in self.x_norm.iter().zip(&self.values) {
            let d2: f64 = q.iter().zip(xi).map(|(a, b)| (a - b).powi(2)).sum();
            let w = (-d2 / (2.0 * h * h)).exp();
            num += w * v;
            den += w;
        }
        if den > 1e-300 {
            num / den
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Settings for the least-squares step: the calibration-parameter search
/// box is required because no prior information is used.
#[derive(Debug, Clone)]
pub struct LsSettings {
    pub n_starts: usize,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub max_evals: usize,
}

impl LsSettings {
    pub fn new(seed: u64, bounds: Vec<(f64, f64)>) -> Self {
        LsSettings {
            n_starts: 8,
            seed,
            bounds,
            max_evals: 2000,
        }
    }
}

/// Two-step least-squares output: the minimizer of the mean squared
/// prediction error, the residuals at the data, and their smoothed
/// regression as a pointwise discrepancy estimate.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub theta: Vec<f64>,
    /// Achieved mean squared error.
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub discrepancy: NwRegressor,
    pub converged: bool,
}

/// Least-squares calibration against any total prediction function:
/// minimizes the mean squared error over the parameter box by multistart
/// local search, then smooths the residuals as the discrepancy estimate.
pub fn least_squares_calibrate(
    predict: &dyn Simulator,
    data: &FieldDataSet,
    nw_columns: &[usize],
    settings: &LsSettings,
) -> Result<LeastSquaresFit> {
    let dim = settings.bounds.len();
    if dim == 0 {
        return Err(CalError::invalid("least squares needs a parameter box"));
    }
    let n = data.n();
    let msqe = |theta: &[f64]| -> f64 {
        let mut ss = 0.0;
        for i in 0..n {
            match predict.run(&data.x_row(i), theta) {
                Ok(f) => ss += (data.y()[i] - f).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        ss / n as f64
    };

    let names: Vec<String> = (0..dim).map(|j| format!("theta{j}")).collect();
    let mle = MleSettings {
        n_starts: settings.n_starts,
        seed: settings.seed,
        bounds: Some(settings.bounds.clone()),
        max_evals: settings.max_evals,
    };
    let fit = multistart_maximize(
        |theta| -msqe(theta),
        &names,
        &settings.bounds,
        &vec![false; dim],
        &mle,
    )?;

    // Polish the best point so the minimizer matches closed forms well
    // below the multistart tolerances.
    let polish_steps: Vec<f64> = settings
        .bounds
        .iter()
        .map(|(lo, hi)| 1e-3 * (hi - lo))
        .collect();
    let polish = nelder_mead(
        msqe,
        &fit.values,
        &polish_steps,
        NmOptions {
            max_evals: settings.max_evals.max(4000),
            tol_f: 0.0,
            tol_x: 1e-13,
        },
    );
    let (theta, converged) = if polish.f <= -fit.log_likelihood {
        (polish.x, fit.converged || polish.converged)
    } else {
        (fit.values, fit.converged)
    };
    let residuals: Vec<f64> = (0..n)
        .map(|i| predict.run(&data.x_row(i), &theta).map(|f| data.y()[i] - f))
        .collect::<Result<Vec<f64>>>()?;
    let discrepancy = NwRegressor::fit(data, nw_columns, &residuals)?;
    let objective = msqe(&theta);
    Ok(LeastSquaresFit {
        theta,
        objective,
        residuals,
        discrepancy,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Design, Provenance};
    use crate::gp::BasisSpec;
    use crate::kernel::KernelFamily;
    use crate::models::{EmulatorContext, PriorSpec};
    use crate::sim::FnSimulator;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn location_data(n: usize, seed: u64) -> FieldDataSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = (0..n).map(|_| 2.0 + rng.random::<f64>()).collect();
        FieldDataSet::new(
            vec!["x".into()],
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            nalgebra::DVector::from_vec(ys),
        )
        .unwrap()
    }

    #[test]
    fn m1_mle_recovers_mean_and_biased_variance() {
        let data = location_data(25, 5);
        let sim = FnSimulator(|_: &[f64], t: &[f64]| Ok(t[0]));
        let model =
            CalibModel::m1(Arc::new(sim), vec!["theta".into()], PriorSpec::default()).unwrap();
        let mut settings = MleSettings::new(3);
        settings.bounds = Some(vec![(0.0, 5.0), (1e-4, 2.0)]);
        let fit = full_mle(&model, &data, &settings).unwrap();

        let n = data.n() as f64;
        let ybar = data.y().iter().sum::<f64>() / n;
        let biased_var = data.y().iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / n;
        let theta_hat = fit.get("theta").unwrap();
        let s2_hat = fit.get("sigma_err2").unwrap();
        assert!((theta_hat - ybar).abs() < 1e-5, "{theta_hat} vs {ybar}");
        assert!(
            (s2_hat - biased_var).abs() < 1e-5 * biased_var.max(1.0),
            "{s2_hat} vs {biased_var}"
        );
    }

    #[test]
    fn mle_objective_at_estimate_dominates_truth() {
        let data = location_data(30, 11);
        let sim = FnSimulator(|x: &[f64], t: &[f64]| Ok(t[0] + 0.01 * x[0]));
        let model =
            CalibModel::m1(Arc::new(sim), vec!["theta".into()], PriorSpec::default()).unwrap();
        let mut settings = MleSettings::new(7);
        settings.bounds = Some(vec![(0.0, 5.0), (1e-4, 2.0)]);
        let fit = full_mle(&model, &data, &settings).unwrap();
        let at_truth = model.log_likelihood(&data, &[2.5], &[0.0833]).unwrap();
        assert!(
            fit.log_likelihood >= at_truth - 1e-6,
            "{} vs {at_truth}",
            fit.log_likelihood
        );
    }

    #[test]
    fn mle_matches_grid_oracle_on_one_dimensional_problem() {
        // Code quadratic in the single parameter; fixed noise variance via
        // tight bounds would distort the comparison, so the grid oracle
        // profiles the analytic variance at each grid node.
        let data = location_data(20, 13);
        let sim = FnSimulator(|_: &[f64], t: &[f64]| Ok(t[0] * t[0]));
        let model =
            CalibModel::m1(Arc::new(sim), vec!["theta".into()], PriorSpec::default()).unwrap();
        let mut settings = MleSettings::new(19);
        settings.bounds = Some(vec![(0.5, 3.0), (1e-6, 2.0)]);
        let fit = full_mle(&model, &data, &settings).unwrap();

        let n = data.n() as f64;
        let grid_step = 2.5 / 2000.0;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=2000 {
            let t = 0.5 + grid_step * k as f64;
            let ss: f64 = data.y().iter().map(|y| (y - t * t).powi(2)).sum();
            let s2 = (ss / n).max(1e-12);
            let ll = model.log_likelihood(&data, &[t], &[s2]).unwrap();
            if ll > best.0 {
                best = (ll, t);
            }
        }
        let theta_hat = fit.get("theta").unwrap();
        assert!(
            (theta_hat - best.1).abs() <= 2.0 * grid_step,
            "{theta_hat} vs grid {}",
            best.1
        );
    }

    #[test]
    fn mle_objective_is_monotone_in_start_count() {
        // Multimodal in theta: two squared-error basins.
        let data = location_data(15, 17);
        let sim = FnSimulator(|_: &[f64], t: &[f64]| Ok((3.0 * t[0]).sin() + t[0]));
        let model =
            CalibModel::m1(Arc::new(sim), vec!["theta".into()], PriorSpec::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for n_starts in [1usize, 2, 4, 8] {
            let mut settings = MleSettings::new(23);
            settings.n_starts = n_starts;
            settings.bounds = Some(vec![(-4.0, 6.0), (1e-4, 3.0)]);
            let fit = full_mle(&model, &data, &settings).unwrap();
            assert!(
                fit.log_likelihood >= prev - 1e-12,
                "objective fell from {prev} to {} at {n_starts} starts",
                fit.log_likelihood
            );
            prev = fit.log_likelihood;
        }
    }

    fn training_emulator(seed: u64) -> EmulatorContext {
        // Smooth code over (x, theta) on a 24-point design.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..24)
            .map(|_| vec![rng.random::<f64>() * 6.0, rng.random::<f64>()])
            .collect();
        let y_c = nalgebra::DVector::from_iterator(
            24,
            points.iter().map(|p| (p[0] * 0.8).sin() + 2.0 * p[1]),
        );
        let design = Design::new(
            points,
            1,
            1,
            vec![Provenance::Initial; 24],
            vec![(0.0, 6.0), (0.0, 1.0)],
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
    fn smle_step_one_is_bit_identical_to_modular_step_one() {
        let em = training_emulator(31);
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            crate::models::Prior::Uniform { lo: 0.0, hi: 1.0 },
        )])
        .unwrap();
        let model = CalibModel::m2(em.clone(), vec!["theta".into()], priors).unwrap();

        // The shared seed derivation makes both paths call the same fit.
        let seed = 77;
        let direct = PluggedEmulator::fit(em, 8, child_seed(seed, "emulate")).unwrap();
        let (_, via_smle) = smle(&model, &smle_data(), &SmleSettings::new(seed)).unwrap();
        assert_eq!(
            direct.gp().kernel().range.to_bits(),
            via_smle.gp().kernel().range.to_bits()
        );
        assert_eq!(
            direct.gp().kernel().variance.to_bits(),
            via_smle.gp().kernel().variance.to_bits()
        );
        assert_eq!(
            direct.gp().mean().coefficients()[0].to_bits(),
            via_smle.gp().mean().coefficients()[0].to_bits()
        );
    }

    fn smle_data() -> FieldDataSet {
        // Field data from the same smooth code at theta = 0.6 plus noise.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |i, _| 0.5 * i as f64);
        let y = nalgebra::DVector::from_iterator(
            n,
            (0..n).map(|i| {
                ((0.5 * i as f64) * 0.8).sin() + 1.2 + 0.05 * (rng.random::<f64>() - 0.5)
            }),
        );
        FieldDataSet::new(vec!["x".into()], x, y).unwrap()
    }

    #[test]
    fn emulator_fit_never_reads_field_data() {
        let em = training_emulator(61);
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            crate::models::Prior::Uniform { lo: 0.0, hi: 1.0 },
        )])
        .unwrap();
        let model = CalibModel::m2(em, vec!["theta".into()], priors).unwrap();
        let mut settings = ModularSettings::new(88);
        settings.mcmc.phase1_iters = 60;
        settings.mcmc.phase2_iters = 200;
        settings.mcmc.burn_in = 50;
        settings.mcmc.init = Some(vec![0.5, 0.01]);

        let data = smle_data();
        let mut perturbed_y = data.y().clone();
        perturbed_y[0] += 5.0;
        let perturbed =
            FieldDataSet::new(data.names().to_vec(), data.x().clone(), perturbed_y).unwrap();

        let (_, _, em_a) = modular_calibrate(&model, &data, &settings).unwrap();
        let (_, _, em_b) = modular_calibrate(&model, &perturbed, &settings).unwrap();
        assert_eq!(
            em_a.gp().kernel().range.to_bits(),
            em_b.gp().kernel().range.to_bits()
        );
        assert_eq!(
            em_a.gp().kernel().variance.to_bits(),
            em_b.gp().kernel().variance.to_bits()
        );
    }

    #[test]
    fn unpredictable_design_outputs_fail_the_q2_gate() {
        // Outputs are high-frequency noise no smooth GP can cross-predict.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y_c =
            nalgebra::DVector::from_iterator(20, (0..20).map(|_| rng.random::<f64>() * 10.0));
        let design = Design::new(
            points,
            1,
            1,
            vec![Provenance::Initial; 20],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        let em = EmulatorContext::new(
            design,
            y_c,
            KernelFamily::Matern52,
            BasisSpec::Constant,
            1e-8,
            vec![0],
        )
        .unwrap();
        let priors = PriorSpec::new(vec![(
            "theta".into(),
            crate::models::Prior::Uniform { lo: 0.0, hi: 1.0 },
        )])
        .unwrap();
        let model = CalibModel::m2(em, vec!["theta".into()], priors).unwrap();
        let settings = ModularSettings::new(5);
        let data = smle_data();
        let err = modular_calibrate(&model, &data, &settings).unwrap_err();
        assert!(err.to_string().contains("Q^2"), "unexpected error: {err}");
    }

    #[test]
    fn least_squares_on_location_code_returns_data_mean() {
        let data = location_data(30, 3);
        let sim = FnSimulator(|_: &[f64], t: &[f64]| Ok(t[0]));
        let settings = LsSettings::new(15, vec![(0.0, 5.0)]);
        let fit = least_squares_calibrate(&sim, &data, &[0], &settings).unwrap();
        let ybar = data.y().iter().sum::<f64>() / data.n() as f64;
        assert!((fit.theta[0] - ybar).abs() < 1e-6, "{} vs {ybar}", fit.theta[0]);
    }

    #[test]
    fn zero_residuals_smooth_to_zero() {
        let data = location_data(10, 21);
        let ys: Vec<f64> = data.y().iter().copied().collect();
        let sim = FnSimulator(move |x: &[f64], _: &[f64]| Ok(ys[x[0] as usize]));
        let settings = LsSettings::new(1, vec![(0.0, 1.0)]);
        let fit = least_squares_calibrate(&sim, &data, &[0], &settings).unwrap();
        assert!(fit.objective < 1e-20);
        for i in 0..data.n() {
            assert_eq!(fit.discrepancy.predict_row(&data.x_row(i)), 0.0);
        }
    }

    #[test]
    fn linear_code_matches_ordinary_least_squares() {
        // F(x, theta) = theta0 + theta1 x: the minimizer solves the normal
        // equations of a straight-line fit.
        let data = {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let n = 40;
            let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / 4.0);
            let y = nalgebra::DVector::from_iterator(
                n,
                (0..n).map(|i| 1.5 + 0.3 * (i as f64 / 4.0) + 0.1 * (rng.random::<f64>() - 0.5)),
            );
            FieldDataSet::new(vec!["x".into()], x, y).unwrap()
        };
        let sim = FnSimulator(|x: &[f64], t: &[f64]| Ok(t[0] + t[1] * x[0]));
        let mut settings = LsSettings::new(27, vec![(0.0, 3.0), (-1.0, 1.0)]);
        settings.max_evals = 4000;
        let fit = least_squares_calibrate(&sim, &data, &[0], &settings).unwrap();

        // Normal equations.
        let n = data.n() as f64;
        let sx: f64 = data.x().column(0).iter().sum();
        let sy: f64 = data.y().iter().sum();
        let sxx: f64 = data.x().column(0).iter().map(|v| v * v).sum();
        let sxy: f64 = data
            .x()
            .column(0)
            .iter()
            .zip(data.y().iter())
            .map(|(a, b)| a * b)
            .sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert!((fit.theta[0] - intercept).abs() < 1e-6, "{} vs {intercept}", fit.theta[0]);
        assert!((fit.theta[1] - slope).abs() < 1e-6, "{} vs {slope}", fit.theta[1]);
    }

    #[test]
    fn nw_regressor_recovers_a_smooth_trend() {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / 10.0);
        let values: Vec<f64> = (0..n).map(|i| (i as f64 / 10.0).sin()).collect();
        let y = nalgebra::DVector::from_vec(values.clone());
        let data = FieldDataSet::new(vec!["t".into()], x, y).unwrap();
        let nw = NwRegressor::fit(&data, &[0], &values).unwrap();
        for i in (5..55).step_by(7) {
            let pred = nw.predict_row(&data.x_row(i));
            assert!(
                (pred - values[i]).abs() < 0.05,
                "at {i}: {pred} vs {}",
                values[i]
            );
        }
    }
}
