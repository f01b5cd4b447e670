//! Sequential augmentation of the training design, steering new code runs
//! toward calibration-relevant regions.
//!
//! Each step probes the squared-error criterion over the parameter box,
//! fits a scalar GP surrogate to the probes, picks the parameter value
//! maximizing expected improvement over a uniform candidate set, pairs it
//! with the field input where the emulator is currently most uncertain,
//! runs the code there once, and refits the emulator.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::{lhs, Provenance};
use crate::error::{CalError, Result};
use crate::estimators::emulator_cv_q2;
use crate::gp::{fit_hyperparameters, BasisSpec};
use crate::kernel::KernelFamily;
use crate::models::{EmulatorContext, FieldDataSet, PluggedEmulator};
use crate::seeding::{child_seed, indexed_seed};
use crate::sim::Simulator;

/// Mean squared prediction error of the emulator mean against the field
/// data at a parameter value.
pub fn sse_criterion(
    plugged: &PluggedEmulator,
    data: &FieldDataSet,
    theta: &[f64],
) -> Result<f64> {
    let tuples = plugged.context().joint_tuples(data, theta)?;
    let mu = plugged.gp().posterior_mean(&tuples);
    let n = data.n() as f64;
    Ok((data.y() - mu).iter().map(|e| e * e).sum::<f64>() / n)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Expected improvement of a minimization surrogate with predictive mean
/// `m` and sd `s` against the best observed value `b`:
/// `(b - m) CDF(z) + s pdf(z)` with `z = (b - m)/s`, degrading to
/// `max(b - m, 0)` at `s = 0`.
pub fn expected_improvement(m: f64, s: f64, b: f64) -> f64 {
    if !(s > 0.0) {
        return (b - m).max(0.0);
    }
    let z = (b - m) / s;
    ((b - m) * normal_cdf(z) + s * normal_pdf(z)).max(0.0)
}

/// Tuning for the augmentation loop.
#[derive(Debug, Clone)]
pub struct SeqSettings {
    /// Number of code runs to add.
    pub budget: usize,
    /// Criterion probes per step (surrogate training set).
    pub n_probes: usize,
    /// Uniform candidate draws per step for the acquisition search.
    pub n_candidates: usize,
    /// Restarts when refitting the emulator after each appended run.
    pub emulator_restarts: usize,
    /// Restarts when fitting the per-step criterion surrogate.
    pub surrogate_restarts: usize,
    /// Folds of the before/after cross-validation score.
    pub cv_folds: usize,
    pub seed: u64,
}

impl SeqSettings {
    pub fn new(seed: u64) -> Self {
        SeqSettings {
            budget: 10,
            n_probes: 32,
            n_candidates: 512,
            emulator_restarts: 8,
            surrogate_restarts: 4,
            cv_folds: 5,
            seed,
        }
    }
}

/// Record of one augmentation run.
#[derive(Debug, Clone)]
pub struct AugmentationTrace {
    /// Appended joint points, in order.
    pub points: Vec<Vec<f64>>,
    /// Criterion value at each step's chosen parameter, under the
    /// pre-append emulator.
    pub criteria: Vec<f64>,
    /// Running best (lowest) criterion value seen up to each step,
    /// including the step's probes.
    pub best: Vec<f64>,
    /// Acquisition value of each chosen parameter.
    pub ei: Vec<f64>,
    /// Cross-validation score of the emulator before any augmentation.
    pub q2_before: f64,
    /// Cross-validation score after the final refit.
    pub q2_after: f64,
}

/// Completed augmentation: the enlarged training set and the refit emulator.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub context: EmulatorContext,
    pub emulator: PluggedEmulator,
    pub trace: AugmentationTrace,
}

/// Augmentation aborted by a code failure; the steps completed before the
/// failure are preserved.
#[derive(Debug)]
pub struct AugmentFailure {
    pub error: CalError,
    pub partial: AugmentationTrace,
}

impl std::fmt::Display for AugmentFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "augmentation stopped after {} of its steps: {}",
            self.partial.points.len(),
            self.error
        )
    }
}

impl std::error::Error for AugmentFailure {}

impl From<AugmentFailure> for CalError {
    fn from(f: AugmentFailure) -> CalError {
        f.error
    }
}

/// Adds `settings.budget` code runs to the training design, one per step,
/// each chosen by expected improvement on the criterion surrogate and the
/// field input of highest emulator variance; the emulator is refit after
/// every appended run.
pub fn augment_design(
    simulator: &dyn Simulator,
    em: EmulatorContext,
    data: &FieldDataSet,
    settings: &SeqSettings,
) -> std::result::Result<Augmentation, AugmentFailure> {
    match augment_inner(simulator, em, data, settings) {
        Ok(aug) => Ok(aug),
        Err((error, partial)) => Err(AugmentFailure { error, partial }),
    }
}

type StepError = (CalError, AugmentationTrace);

fn augment_inner(
    simulator: &dyn Simulator,
    em: EmulatorContext,
    data: &FieldDataSet,
    settings: &SeqSettings,
) -> std::result::Result<Augmentation, StepError> {
    let mut trace = AugmentationTrace {
        points: Vec::new(),
        criteria: Vec::new(),
        best: Vec::new(),
        ei: Vec::new(),
        q2_before: f64::NAN,
        q2_after: f64::NAN,
    };
    let fail = |e: CalError, t: &AugmentationTrace| (e, t.clone());

    if settings.budget == 0 {
        return Err(fail(CalError::invalid("budget must be at least 1"), &trace));
    }
    let var_dim = em.design().var_dim();
    let param_dim = em.design().param_dim();
    if param_dim == 0 {
        return Err(fail(
            CalError::invalid("design has no parameter coordinates to search"),
            &trace,
        ));
    }
    let param_bounds: Vec<(f64, f64)> = em.design().bounds()[var_dim..].to_vec();
    let var_columns = em.var_columns().to_vec();

    let mut plugged = PluggedEmulator::fit(
        em,
        settings.emulator_restarts,
        child_seed(settings.seed, "seq-fit-initial"),
    )
    .map_err(|e| fail(e, &trace))?;
    trace.q2_before = emulator_cv_q2(
        &plugged,
        settings.cv_folds.min(plugged.context().design().len()),
    )
    .map_err(|e| fail(e, &trace))?;

    let denorm = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(&param_bounds)
            .map(|(&v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    };

    let mut running_best = f64::INFINITY;
    for step in 0..settings.budget {
        // Probe the criterion over the parameter box.
        let probes_norm = lhs(
            settings.n_probes,
            param_dim,
            indexed_seed(settings.seed, "seq-probe", step),
        );
        let mut probe_values = Vec::with_capacity(settings.n_probes);
        for u in &probes_norm {
            let theta = denorm(u);
            let v = sse_criterion(&plugged, data, &theta).map_err(|e| fail(e, &trace))?;
            probe_values.push(v);
            running_best = running_best.min(v);
        }

        // Scalar surrogate of the criterion over normalized parameters.
        let surrogate = fit_hyperparameters(
            &probes_norm,
            &DVector::from_vec(probe_values.clone()),
            BasisSpec::Constant,
            KernelFamily::Matern52,
            settings.surrogate_restarts,
            indexed_seed(settings.seed, "seq-surrogate", step),
        )
        .map_err(|e| fail(e, &trace))?;

        // Acquisition search over uniform candidates.
        let mut rng =
            ChaCha8Rng::seed_from_u64(indexed_seed(settings.seed, "seq-candidates", step));
        let candidates: Vec<Vec<f64>> = (0..settings.n_candidates)
            .map(|_| (0..param_dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let (mu, var) = surrogate.posterior_mean_and_var(&candidates);
        let mut chosen = 0usize;
        let mut chosen_ei = f64::NEG_INFINITY;
        for (k, cand) in candidates.iter().enumerate() {
            let ei = expected_improvement(mu[k], var[k].sqrt(), running_best);
            if ei > chosen_ei {
                chosen_ei = ei;
                chosen = k;
            }
            let _ = cand;
        }
        let theta_plus = denorm(&candidates[chosen]);

        // Field input where the current emulator is least certain at the
        // chosen parameter.
        let tuples = plugged
            .context()
            .joint_tuples(data, &theta_plus)
            .map_err(|e| fail(e, &trace))?;
        let (_, pred_var) = plugged.gp().posterior_mean_and_var(&tuples);
        let mut x_star = 0usize;
        for i in 1..data.n() {
            if pred_var[i] > pred_var[x_star] {
                x_star = i;
            }
        }

        let criterion_at_choice =
            sse_criterion(&plugged, data, &theta_plus).map_err(|e| fail(e, &trace))?;
        running_best = running_best.min(criterion_at_choice);

        // The step's single code run.
        let x_row = data.x_row(x_star);
        let y_plus = simulator
            .run(&x_row, &theta_plus)
            .map_err(|e| fail(e, &trace))?;
        if !y_plus.is_finite() {
            return Err(fail(
                CalError::Simulator {
                    index: plugged.context().design().len(),
                    message: "code returned a non-finite value".to_string(),
                },
                &trace,
            ));
        }

        let mut point: Vec<f64> = var_columns.iter().map(|&c| x_row[c]).collect();
        point.extend_from_slice(&theta_plus);

        let old = plugged.context();
        let mut design = old.design().clone();
        design
            .push(point.clone(), Provenance::Sequential)
            .map_err(|e| fail(e, &trace))?;
        let mut y_c: Vec<f64> = old.y_c().iter().copied().collect();
        y_c.push(y_plus);
        let context = EmulatorContext::new(
            design,
            DVector::from_vec(y_c),
            old.family,
            old.basis,
            old.nugget_rel,
            var_columns.clone(),
        )
        .map_err(|e| fail(e, &trace))?;

        plugged = PluggedEmulator::fit(
            context,
            settings.emulator_restarts,
            indexed_seed(settings.seed, "seq-refit", step),
        )
        .map_err(|e| fail(e, &trace))?;

        trace.points.push(point);
        trace.criteria.push(criterion_at_choice);
        trace.best.push(running_best);
        trace.ei.push(chosen_ei);
    }

    trace.q2_after = emulator_cv_q2(
        &plugged,
        settings.cv_folds.min(plugged.context().design().len()),
    )
    .map_err(|e| fail(e, &trace))?;

    Ok(Augmentation {
        context: plugged.context().clone(),
        emulator: plugged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Design;
    use crate::sim::FnSimulator;
    use nalgebra::DMatrix;
    use std::sync::atomic::{AtomicUsize, Ordering};

    // Pinned against an independent normal-table evaluation of
    // CDF(1) + pdf(1).
    const EI_UNIT_GAP: f64 = 1.0833154705876863;

    #[test]
    fn expected_improvement_closed_forms() {
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
        let at_best = expected_improvement(1.0, 2.0, 1.0);
        assert!(
            (at_best - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14,
            "{at_best}"
        );
        let unit = expected_improvement(0.0, 1.0, 1.0);
        assert!((unit - EI_UNIT_GAP).abs() < 1e-9, "{unit}");
    }

    #[test]
    fn expected_improvement_is_nonnegative_and_vanishes_without_hope() {
        for &(m, s, b) in &[
            (0.0, 1.0, -3.0),
            (5.0, 0.2, 1.0),
            (1.0, 0.0, 1.0),
            (-2.0, 3.0, 4.0),
        ] {
            assert!(expected_improvement(m, s, b) >= 0.0);
        }
        // s -> 0 with m >= b collapses to zero.
        assert_eq!(expected_improvement(1.5, 1e-300, 1.0), 0.0);
    }

    fn code(x: &[f64], t: &[f64]) -> f64 {
        (x[0] * 0.9).sin() + 2.0 * t[0] + 0.3 * t[0] * x[0]
    }

    fn toy_context(n: usize) -> EmulatorContext {
        let points = lhs(n, 2, 99)
            .into_iter()
            .map(|u| vec![u[0] * 6.0, u[1]])
            .collect::<Vec<_>>();
        let y_c = DVector::from_iterator(n, points.iter().map(|p| code(&p[..1], &p[1..])));
        let design = Design::new(
            points,
            1,
            1,
            vec![Provenance::Initial; n],
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

    fn toy_data(theta: f64) -> FieldDataSet {
        let n = 9;
        let x = DMatrix::from_fn(n, 1, |i, _| 0.65 * i as f64);
        let y = DVector::from_iterator(n, (0..n).map(|i| code(&[0.65 * i as f64], &[theta])));
        FieldDataSet::new(vec!["x".into()], x, y).unwrap()
    }

    #[test]
    fn criterion_matches_loop_oracle_and_is_zero_at_truth_limit() {
        let em = toy_context(30);
        let plugged = PluggedEmulator::fit(em, 6, 5).unwrap();
        let data = toy_data(0.62);
        let theta = [0.3];
        let got = sse_criterion(&plugged, &data, &theta).unwrap();
        // Loop oracle.
        let mut want = 0.0;
        for i in 0..data.n() {
            let t = plugged.context().joint_tuple(&data.x_row(i), &theta);
            let mu = plugged.gp().posterior_mean(std::slice::from_ref(&t));
            want += (data.y()[i] - mu[0]).powi(2);
        }
        want /= data.n() as f64;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.0);
        // Near the generating value the emulator mean tracks the data, so
        // the criterion is near zero.
        let at_truth = sse_criterion(&plugged, &data, &[0.62]).unwrap();
        assert!(at_truth < 1e-2 * got, "{at_truth} vs {got}");
    }

    #[test]
    fn augmentation_spends_exactly_the_budget_and_keeps_the_prefix() {
        static CALLS: AtomicUsize = AtomicUsize::new(0);
        let sim = FnSimulator(|x: &[f64], t: &[f64]| {
            CALLS.fetch_add(1, Ordering::SeqCst);
            Ok(code(x, t))
        });
        let em = toy_context(20);
        let original_points = em.design().points().to_vec();
        let data = toy_data(0.62);
        let mut settings = SeqSettings::new(12);
        settings.budget = 3;
        settings.n_probes = 16;
        settings.n_candidates = 64;
        settings.emulator_restarts = 4;
        settings.surrogate_restarts = 2;

        let aug = augment_design(&sim, em, &data, &settings).unwrap();
        assert_eq!(CALLS.load(Ordering::SeqCst), 3, "one code run per step");
        assert_eq!(aug.trace.points.len(), 3);
        assert_eq!(aug.context.design().len(), 23);
        // Prefix property: the original points survive unchanged, in order.
        for (i, p) in original_points.iter().enumerate() {
            assert_eq!(&aug.context.design().points()[i], p);
        }
        for (i, prov) in aug.context.design().provenance().iter().enumerate() {
            let want = if i < 20 {
                Provenance::Initial
            } else {
                Provenance::Sequential
            };
            assert_eq!(*prov, want);
        }
        assert!(aug.trace.criteria.iter().all(|v| v.is_finite()));
        for w in aug.trace.best.windows(2) {
            assert!(w[1] <= w[0], "best-so-far increased: {:?}", aug.trace.best);
        }
        assert!(aug.trace.q2_before.is_finite());
        assert!(aug.trace.q2_after.is_finite());
    }

    #[test]
    fn augmentation_is_deterministic_given_seed() {
        let sim = FnSimulator(|x: &[f64], t: &[f64]| Ok(code(x, t)));
        let data = toy_data(0.62);
        let mut settings = SeqSettings::new(31);
        settings.budget = 2;
        settings.n_probes = 12;
        settings.n_candidates = 48;
        settings.emulator_restarts = 3;
        settings.surrogate_restarts = 2;
        let a = augment_design(&sim, toy_context(18), &data, &settings).unwrap();
        let b = augment_design(&sim, toy_context(18), &data, &settings).unwrap();
        assert_eq!(a.trace.points, b.trace.points);
        assert_eq!(a.trace.criteria, b.trace.criteria);
    }

    #[test]
    fn simulator_failure_preserves_the_partial_trace() {
        static CALLS: AtomicUsize = AtomicUsize::new(0);
        let sim = FnSimulator(|x: &[f64], t: &[f64]| {
            let k = CALLS.fetch_add(1, Ordering::SeqCst);
            if k >= 2 {
                Err(CalError::Simulator {
                    index: k,
                    message: "diverged".to_string(),
                })
            } else {
                Ok(code(x, t))
            }
        });
        let data = toy_data(0.62);
        let mut settings = SeqSettings::new(8);
        settings.budget = 5;
        settings.n_probes = 12;
        settings.n_candidates = 48;
        settings.emulator_restarts = 3;
        settings.surrogate_restarts = 2;
        let err = augment_design(&sim, toy_context(18), &data, &settings).unwrap_err();
        assert_eq!(err.partial.points.len(), 2, "two steps completed");
        assert!(matches!(err.error, CalError::Simulator { .. }));
    }
}
