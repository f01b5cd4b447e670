//! End-to-end pipelines behind the command-line interface: synthetic data
//! generation, input screening, emulator construction, calibration,
//! prediction, and blocked cross-validation. Each pipeline consumes a
//! [`RunConfig`] and drops CSV artifacts into the output directory.
//!
//! Every random stream derives from the workspace seed, so re-running a
//! pipeline with the same config and seed rewrites byte-identical files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::config::{RunConfig, SimulatorKind};
use crate::design::{build_design, pca_decorrelate, run_design};
use crate::error::{CalError, Result};
use crate::estimators::{modular_calibrate, emulator_cv_q2, ModularSettings};
use crate::gp::BasisSpec;
use crate::io;
use crate::kernel::KernelFamily;
use crate::mcmc::{two_phase_calibrate, Chain, McmcSettings, PosteriorSummary};
use crate::models::{
    CalibModel, DiscrepancyContext, EmulatorContext, FieldDataSet, LikelihoodMode,
    PluggedEmulator,
};
use crate::seeding::child_seed;
use crate::seq::{augment_design, SeqSettings};
use crate::sim::{FnSimulator, Simulator};
use crate::testbed::{
    analytic_codes, daily_bump_shape, generate_field_data, morris_screening, pv_hourly_inputs,
    pv_named_simulator, pv_power_from_zenith, zenith_cosine, PvSurrogateConfig,
    SyntheticScenario, PV_THETA_STAR,
};
use crate::validate::{cross_validate, posterior_predict, CvSettings, PredictSettings,
    PredictiveBand, ValidationReport};

/// Bins of the posterior/prior density table.
const DENSITY_BINS: usize = 40;

/// Canonical slot order of the plant model's six screenable parameters.
const PV_PARAM_SLOTS: [&str; 6] = ["eta", "mu_t", "a_r", "n_t", "a_l", "n_inc"];

/// A loaded config plus the effective seed and output directory after
/// command-line overrides.
pub struct Workspace {
    config: RunConfig,
    seed: u64,
    out_dir: PathBuf,
}

/// What `generate` produced.
#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub path: PathBuf,
    pub rows: usize,
}

/// What `screen` produced: inputs ranked by decreasing influence.
#[derive(Debug, Clone)]
pub struct ScreenOutcome {
    pub names: Vec<String>,
    pub mu_star: Vec<f64>,
    pub sigma: Vec<f64>,
    pub path: PathBuf,
}

/// What `emulate` produced.
#[derive(Debug, Clone)]
pub struct EmulateOutcome {
    /// Cross-validation predictivity of the fitted surrogate.
    pub q2: f64,
    /// Code runs in the final design.
    pub n_runs: usize,
    pub variance: f64,
    pub range: f64,
}

/// A finished calibration: the ingested data, the model in its
/// prediction-ready form, and the posterior sample.
pub struct CalibrationRun {
    pub data: FieldDataSet,
    pub stats: io::IngestStats,
    pub model: CalibModel,
    pub chain: Chain,
    pub summary: PosteriorSummary,
}

/// What `predict` produced.
pub struct PredictOutcome {
    pub run: CalibrationRun,
    pub band: PredictiveBand,
    /// Share of field observations inside the band.
    pub coverage: f64,
    pub rmse: f64,
}

impl Workspace {
    pub fn new(config: RunConfig, seed: Option<u64>, out_dir: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(config.seed);
        let out_dir = out_dir.unwrap_or_else(|| config.output_dir.clone());
        Workspace {
            config,
            seed,
            out_dir,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn pv(&self) -> PvSurrogateConfig {
        self.config.simulator.pv
    }

    fn mcmc(&self, seed: u64) -> McmcSettings {
        self.config.mcmc_settings(Some(seed))
    }

    /// The configured code behind a named-column interface, for running at
    /// field-data rows. Analytic codes read the time column in days.
    fn field_simulator(&self, names: &[String]) -> Result<Arc<dyn Simulator>> {
        match self.config.simulator.kind {
            SimulatorKind::Pv => pv_named_simulator(names, self.pv()),
            kind => {
                let code = analytic_code(kind)?;
                let i_t = names
                    .iter()
                    .position(|n| n == "t")
                    .ok_or_else(|| CalError::Config("dataset has no column named 't'".into()))?;
                Ok(Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
                    code.run(&[x[i_t] / crate::validate::SECONDS_PER_DAY], theta)
                })))
            }
        }
    }

    /// The configured code over the emulator's variable columns, for
    /// running training designs.
    fn design_simulator(&self, columns: &[String]) -> Result<Arc<dyn Simulator>> {
        let pos = |name: &str| columns.iter().position(|c| c == name);
        match self.config.simulator.kind {
            SimulatorKind::Pv => {
                let config = self.pv();
                let i_ig = pos("I_g");
                let i_id = pos("I_d");
                let i_te = pos("T_e");
                let (Some(i_ig), Some(i_id), Some(i_te)) = (i_ig, i_id, i_te) else {
                    return Err(CalError::Config(
                        "emulator columns must include I_g, I_d, and T_e".into(),
                    ));
                };
                if let Some(i_c) = pos("cos_tz") {
                    Ok(Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
                        pv_power_from_zenith(x[i_c], x[i_ig], x[i_id], x[i_te], theta, &config)
                    })))
                } else if let Some(i_t) = pos("t") {
                    Ok(Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
                        let cos_tz = zenith_cosine(x[i_t], config.latitude, config.longitude);
                        pv_power_from_zenith(cos_tz, x[i_ig], x[i_id], x[i_te], theta, &config)
                    })))
                } else {
                    Err(CalError::Config(
                        "emulator columns must include cos_tz or t".into(),
                    ))
                }
            }
            kind => {
                let code = analytic_code(kind)?;
                let i_t = pos("t").unwrap_or(0);
                Ok(Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
                    code.run(&[x[i_t] / crate::validate::SECONDS_PER_DAY], theta)
                })))
            }
        }
    }

    /// Builds the emulator's training context: a space-filling design over
    /// the decorrelated field-input region times the parameter box, run
    /// through the code, optionally extended by the sequential criterion.
    fn emulator_context(&self, data: &FieldDataSet, seed: u64) -> Result<EmulatorContext> {
        let settings = &self.config.emulator;
        let col_idx = column_indices(data, &settings.columns)?;
        let x_vars = DMatrix::from_fn(data.n(), col_idx.len(), |i, j| data.x()[(i, col_idx[j])]);
        let names_ref: Vec<&str> = settings.columns.iter().map(String::as_str).collect();
        let transform = pca_decorrelate(&x_vars, &names_ref)?;
        let design = build_design(
            &transform,
            &self.config.param_ranges(),
            settings.n_initial,
            child_seed(seed, "design"),
            settings.lhs_candidates,
        )?;
        let simulator = self.design_simulator(&settings.columns)?;
        let y_c = run_design(&*simulator, &design)?;
        let em = EmulatorContext::new(
            design,
            y_c,
            KernelFamily::Matern52,
            BasisSpec::Linear,
            settings.nugget_rel,
            col_idx,
        )?;
        if settings.budget == 0 {
            return Ok(em);
        }
        let mut seq = SeqSettings::new(child_seed(seed, "augment"));
        seq.budget = settings.budget;
        seq.emulator_restarts = settings.n_restarts;
        seq.cv_folds = settings.cv_folds;
        log::info!("extending the design by {} sequential runs", seq.budget);
        match augment_design(&*simulator, em, data, &seq) {
            Ok(aug) => {
                log::info!(
                    "cross-validation Q^2 {:.4} -> {:.4} after augmentation",
                    aug.trace.q2_before,
                    aug.trace.q2_after
                );
                Ok(aug.context)
            }
            Err(failure) => {
                log::warn!(
                    "augmentation stopped after {} of {} steps",
                    failure.partial.points.len(),
                    seq.budget
                );
                Err(failure.error)
            }
        }
    }

    /// Assembles the configured model over the given data. Emulated
    /// variants get a freshly built training design seeded by `seed`.
    fn build_model(&self, data: &FieldDataSet, seed: u64) -> Result<CalibModel> {
        let theta_names = self.config.theta_names();
        let priors = self.config.prior_spec()?;
        let variant = self.config.model.variant;

        let disc = if variant.uses_discrepancy() {
            let cols = column_indices(data, &self.config.discrepancy.columns)?;
            Some(DiscrepancyContext::from_data(
                data,
                cols,
                KernelFamily::Matern52,
            )?)
        } else {
            None
        };

        let model = if variant.uses_emulator() {
            let em = self.emulator_context(data, seed)?;
            match disc {
                Some(d) => CalibModel::m4(em, d, theta_names, priors)?,
                None => CalibModel::m2(em, theta_names, priors)?,
            }
        } else {
            let simulator = self.field_simulator(data.names())?;
            match disc {
                Some(d) => CalibModel::m3(simulator, d, theta_names, priors)?,
                None => CalibModel::m1(simulator, theta_names, priors)?,
            }
        };

        let model = if self.config.model.likelihood == LikelihoodMode::Full {
            model.with_full_likelihood()?
        } else {
            model
        };
        self.check_priors_cover(&model)?;
        Ok(model)
    }

    /// Every sampled coordinate needs a declared prior; failing early gives
    /// a message naming the missing ones.
    fn check_priors_cover(&self, model: &CalibModel) -> Result<()> {
        let missing: Vec<String> = model
            .nuisance_names()
            .into_iter()
            .filter(|n| model.priors.get(n).is_none())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CalError::Config(format!(
                "[nuisance_priors] must declare: {}",
                missing.join(", ")
            )))
        }
    }

    /// Fits the configured model on `data` and returns it in its
    /// prediction-ready form together with the posterior sample.
    fn fit(&self, data: &FieldDataSet, seed: u64) -> Result<(CalibModel, Chain, PosteriorSummary)> {
        let model = self.build_model(data, seed)?;
        if model.variant.uses_emulator() && model.mode == LikelihoodMode::Modular {
            let em_cfg = &self.config.emulator;
            let mut settings = ModularSettings::new(seed);
            settings.mcmc = self.mcmc(seed);
            settings.n_restarts = em_cfg.n_restarts;
            settings.cv_folds = em_cfg.cv_folds;
            settings.q2_threshold = em_cfg.q2_threshold;
            let (chain, summary, plugged) = modular_calibrate(&model, data, &settings)?;
            Ok((model.with_plugged(plugged), chain, summary))
        } else {
            let (chain, summary) = two_phase_calibrate(&model, data, &self.mcmc(seed))?;
            Ok((model, chain, summary))
        }
    }

    fn ingest(&self) -> Result<(FieldDataSet, io::IngestStats)> {
        self.config.check_inputs_exist()?;
        let (data, stats) = io::ingest_field_data(&self.config.data.field)?;
        log::info!(
            "ingested {} rows into {} hourly observations ({} dropped as non-producing)",
            stats.raw_rows,
            stats.retained,
            stats.buckets - stats.retained
        );
        Ok((data, stats))
    }

    /// Generates synthetic field data from the configured scenario and
    /// writes it to the configured field-data path.
    pub fn generate(&self) -> Result<GenerateOutcome> {
        let gen = &self.config.generate;
        let pv = self.pv();
        let (names, x) = pv_hourly_inputs(gen.start_day, gen.n_days, &pv)?;
        let mut scenario = SyntheticScenario::new(
            names.clone(),
            x,
            gen.theta_star.clone(),
            gen.sigma_err,
            self.seed,
        )?;
        if gen.discrepancy_amplitude > 0.0 {
            scenario = scenario.with_discrepancy(daily_bump_shape(), gen.discrepancy_amplitude)?;
        }
        let simulator = self.field_simulator(&names)?;
        let data = generate_field_data(&scenario, &*simulator)?;
        let path = self.config.data.field.clone();
        io::write_field_csv(&path, &data)?;
        log::info!("wrote {} rows to {}", data.n(), path.display());
        Ok(GenerateOutcome {
            path,
            rows: data.n(),
        })
    }

    /// Ranks the plant model's inputs by influence on noon power output.
    pub fn screen(&self) -> Result<ScreenOutcome> {
        if self.config.simulator.kind != SimulatorKind::Pv {
            return Err(CalError::Config(
                "screening drives the built-in plant model".into(),
            ));
        }
        let sc = &self.config.screen;
        let pv = self.pv();

        let mut slots = Vec::with_capacity(sc.inputs.len());
        for input in &sc.inputs {
            let slot = PV_PARAM_SLOTS
                .iter()
                .position(|s| *s == input.name)
                .ok_or_else(|| {
                    CalError::Config(format!(
                        "unknown screen input '{}'; expected one of {}",
                        input.name,
                        PV_PARAM_SLOTS.join(", ")
                    ))
                })?;
            slots.push(slot);
        }
        let defaults = [
            PV_THETA_STAR[0],
            PV_THETA_STAR[1],
            PV_THETA_STAR[2],
            pv.n_t,
            pv.a_l,
            pv.n_inc,
        ];

        // Evaluate at local solar noon of the configured day.
        let t = f64::from(sc.day - 1) * crate::validate::SECONDS_PER_DAY
            + (12.0 - pv.longitude / 15.0) * 3600.0;
        let cos_tz = zenith_cosine(t, pv.latitude, pv.longitude);
        if cos_tz <= 0.0 {
            return Err(CalError::Config(
                "the screening day has the sun below the horizon at noon".into(),
            ));
        }

        let ranges: Vec<(f64, f64)> = sc.inputs.iter().map(|i| (i.lo, i.hi)).collect();
        let f = |v: &[f64]| -> Result<f64> {
            let mut theta = defaults;
            for (k, &slot) in slots.iter().enumerate() {
                theta[slot] = v[k];
            }
            pv_power_from_zenith(cos_tz, sc.i_g, sc.i_d, sc.t_e, &theta, &pv)
        };
        let result = morris_screening(
            f,
            &ranges,
            sc.trajectories,
            sc.levels,
            child_seed(self.seed, "screen"),
        )?;

        let names: Vec<String> = sc.inputs.iter().map(|i| i.name.clone()).collect();
        let path = self.artifact("screen.csv");
        io::write_screen_csv(&path, &names, &result)?;
        let order = result.ranking();
        Ok(ScreenOutcome {
            names: order.iter().map(|&j| names[j].clone()).collect(),
            mu_star: order.iter().map(|&j| result.mu_star[j]).collect(),
            sigma: order.iter().map(|&j| result.sigma[j]).collect(),
            path,
        })
    }

    /// Builds the training design, runs the code over it, fits the
    /// emulator, and writes the design and fit artifacts.
    pub fn emulate(&self) -> Result<EmulateOutcome> {
        if !self.config.model.variant.uses_emulator() {
            return Err(CalError::Config(format!(
                "{} runs the code directly; emulation applies to m2 and m4",
                self.config.model.variant
            )));
        }
        let (data, _) = self.ingest()?;
        let em = self.emulator_context(&data, self.seed)?;
        self.write_design(&em)?;
        let plugged = PluggedEmulator::fit(
            em,
            self.config.emulator.n_restarts,
            child_seed(self.seed, "emulate"),
        )?;
        let n_runs = plugged.context().design().len();
        let folds = self.config.emulator.cv_folds.min(n_runs);
        let q2 = emulator_cv_q2(&plugged, folds)?;

        let kernel = plugged.gp().kernel();
        let mut rows = vec![
            ("q2".to_string(), q2),
            ("n_runs".to_string(), n_runs as f64),
            ("variance".to_string(), kernel.variance),
            ("range".to_string(), kernel.range),
        ];
        for (k, c) in plugged.gp().mean().coefficients().iter().enumerate() {
            rows.push((format!("beta_{k}"), *c));
        }
        io::write_pairs_csv(&self.artifact("emulator.csv"), &rows)?;
        Ok(EmulateOutcome {
            q2,
            n_runs,
            variance: kernel.variance,
            range: kernel.range,
        })
    }

    fn write_design(&self, em: &EmulatorContext) -> Result<()> {
        io::write_design_csv(
            &self.artifact("design.csv"),
            em.design(),
            &self.config.emulator.columns,
            &self.config.theta_names(),
            em.y_c(),
        )
    }

    /// Samples the posterior of the configured model and writes the chain,
    /// summary, and density artifacts.
    pub fn calibrate(&self) -> Result<CalibrationRun> {
        let (data, stats) = self.ingest()?;
        let (model, chain, summary) = self.fit(&data, self.seed)?;
        if let Some(em) = &model.emulator {
            self.write_design(em)?;
        }
        io::write_chain_csv(&self.artifact("chain.csv"), &chain)?;
        io::write_summary_csv(&self.artifact("summary.csv"), &summary)?;
        let densities = io::density_table(&chain, &model.priors, DENSITY_BINS)?;
        io::write_densities_csv(&self.artifact("densities.csv"), &densities)?;
        Ok(CalibrationRun {
            data,
            stats,
            model,
            chain,
            summary,
        })
    }

    /// Calibrates, then draws a pointwise predictive band at the field
    /// inputs and writes it indexed by the time column.
    pub fn predict(&self) -> Result<PredictOutcome> {
        let run = self.calibrate()?;
        let settings = PredictSettings {
            level: self.config.predict.level,
            draws: self.config.predict.draws,
            seed: self.seed,
        };
        let x_new = run.data.x().clone_owned();
        let band = posterior_predict(&run.model, &run.data, &run.chain, &x_new, &settings)?;
        let index = time_column(&run.data)?;
        io::write_band_csv(&self.artifact("band.csv"), &index, &band)?;
        let coverage = crate::validate::coverage_rate(&band, run.data.y())?;
        let rmse = crate::validate::rmse(band.point(), run.data.y())?;
        Ok(PredictOutcome {
            run,
            band,
            coverage,
            rmse,
        })
    }

    /// Blocked cross-validation of the whole pipeline: each replicate
    /// holds out consecutive days, refits from scratch, and predicts them.
    pub fn validate(&self) -> Result<ValidationReport> {
        let (data, _) = self.ingest()?;
        let time_column = data
            .column_index("t")
            .ok_or_else(|| CalError::Config("dataset has no column named 't'".into()))?;
        let v = &self.config.validate;
        let settings = CvSettings {
            n_reps: v.n_reps,
            holdout_days: v.holdout_days,
            level: v.level,
            seed: self.seed,
            time_column,
        };
        let report = cross_validate(&data, &settings, |train, test, rep_seed| {
            let (model, chain, _) = self.fit(train, rep_seed)?;
            let predict = PredictSettings {
                level: v.level,
                draws: self.config.predict.draws,
                seed: rep_seed,
            };
            posterior_predict(&model, train, &chain, &test.x().clone_owned(), &predict)
        })?;
        io::write_report_csv(&self.artifact("report.csv"), &report)?;
        Ok(report)
    }
}

fn analytic_code(kind: SimulatorKind) -> Result<Arc<dyn Simulator>> {
    match kind {
        SimulatorKind::Pv => Err(CalError::Config("the plant model is not analytic".into())),
        SimulatorKind::Constant => analytic_codes("constant"),
        SimulatorKind::Linear => analytic_codes("linear"),
        SimulatorKind::Nonlinear => analytic_codes("nonlinear"),
    }
}

fn column_indices(data: &FieldDataSet, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            data.column_index(name).ok_or_else(|| {
                CalError::Config(format!("dataset has no column named '{name}'"))
            })
        })
        .collect()
}

fn time_column(data: &FieldDataSet) -> Result<Vec<f64>> {
    let j = data
        .column_index("t")
        .ok_or_else(|| CalError::Config("dataset has no column named 't'".into()))?;
    Ok(data.x().column(j).iter().copied().collect())
}
