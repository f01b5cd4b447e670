//! Run configuration: a TOML file declaring the model, priors, design and
//! sampler settings, and data locations. Everything random is derived from
//! the single `seed` key, so a config fully determines a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CalError, Result};
use crate::mcmc::McmcSettings;
use crate::models::{LikelihoodMode, ModelVariant, Prior, PriorSpec};
use crate::testbed::PvSurrogateConfig;

/// Which built-in code the run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    Pv,
    Constant,
    Linear,
    Nonlinear,
}

// No deny_unknown_fields here: serde cannot combine it with flatten.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatorConfig {
    #[serde(default = "default_sim_kind")]
    pub kind: SimulatorKind,
    #[serde(flatten)]
    pub pv: PvSurrogateConfig,
}

fn default_sim_kind() -> SimulatorKind {
    SimulatorKind::Pv
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SimulatorKind::Pv,
            pv: PvSurrogateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    #[serde(default = "default_likelihood")]
    pub likelihood: LikelihoodMode,
}

fn default_likelihood() -> LikelihoodMode {
    LikelihoodMode::Modular
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Field-data CSV; read by most workflows, written by `generate`.
    pub field: PathBuf,
}

/// One calibration parameter: its search/design range and prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub prior: Prior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmulatorConfig {
    /// Field-data columns the emulator treats as variables.
    pub columns: Vec<String>,
    /// Initial design size.
    pub n_initial: usize,
    /// Sequential augmentation steps after the initial design.
    pub budget: usize,
    pub n_restarts: usize,
    pub cv_folds: usize,
    pub q2_threshold: f64,
    pub nugget_rel: f64,
    /// Candidate designs scored by the maximin criterion.
    pub lhs_candidates: usize,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            columns: vec![
                "cos_tz".to_string(),
                "I_g".to_string(),
                "I_d".to_string(),
                "T_e".to_string(),
            ],
            n_initial: 50,
            budget: 0,
            n_restarts: 8,
            cv_folds: 5,
            q2_threshold: 0.5,
            nugget_rel: 1e-8,
            lhs_candidates: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscrepancyConfig {
    /// Field-data columns the discrepancy kernel acts on.
    pub columns: Vec<String>,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        DiscrepancyConfig {
            columns: vec!["t".to_string()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub burn_in: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            phase1_iters: 3000,
            phase2_iters: 10000,
            burn_in: 3000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub level: f64,
    pub draws: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            level: 0.9,
            draws: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub n_reps: usize,
    pub holdout_days: i64,
    pub level: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            n_reps: 20,
            holdout_days: 3,
            level: 0.9,
        }
    }
}

/// One screened input: name and physical range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenInput {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub trajectories: usize,
    pub levels: usize,
    /// Inputs in screening order; defaults to the six PV parameters.
    pub inputs: Vec<ScreenInput>,
    /// Day of year for the screening input.
    pub day: u32,
    pub i_g: f64,
    pub i_d: f64,
    pub t_e: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        let inputs = [
            ("eta", 0.043, 0.243),
            ("mu_t", -0.6, -0.2),
            ("a_r", 0.05, 0.29),
            ("n_t", 42.0, 48.0),
            ("a_l", 0.1, 0.3),
            ("n_inc", 0.94, 0.98),
        ]
        .into_iter()
        .map(|(name, lo, hi)| ScreenInput {
            name: name.to_string(),
            lo,
            hi,
        })
        .collect();
        // A winter-noon input: the low sun keeps incidence losses active,
        // so all three electrical parameters register as influential.
        ScreenConfig {
            trajectories: 10,
            levels: 4,
            inputs,
            day: 45,
            i_g: 800.0,
            i_d: 200.0,
            t_e: 25.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// First generated day of year (1-based).
    pub start_day: u32,
    pub n_days: u32,
    /// Measurement noise standard deviation in output units.
    pub sigma_err: f64,
    /// Amplitude of the injected smooth daily discrepancy; 0 disables it.
    pub discrepancy_amplitude: f64,
    /// Generating parameter values.
    pub theta_star: Vec<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            start_day: 100,
            n_days: 25,
            sigma_err: 60.0,
            discrepancy_amplitude: 0.0,
            theta_star: crate::testbed::PV_THETA_STAR.to_vec(),
        }
    }
}

/// A full run declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(rename = "parameter")]
    pub parameters: Vec<ParameterConfig>,
    #[serde(default)]
    pub nuisance_priors: BTreeMap<String, Prior>,
    #[serde(default)]
    pub emulator: EmulatorConfig,
    #[serde(default)]
    pub discrepancy: DiscrepancyConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub screen: ScreenConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CalError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.check()?;
        Ok(config)
    }

    /// Rebases relative paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.data.field.is_relative() {
            self.data.field = base.join(&self.data.field);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Structural validation; runs before any computation.
    pub fn check(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(CalError::Config(
                "declare at least one [[parameter]]".to_string(),
            ));
        }
        for p in &self.parameters {
            if !p.lo.is_finite() || !p.hi.is_finite() || p.lo >= p.hi {
                return Err(CalError::Config(format!(
                    "parameter '{}' needs a finite range with lo < hi",
                    p.name
                )));
            }
        }
        // Builds the joint spec, which rejects duplicates and improper priors.
        self.prior_spec()?;

        self.simulator.pv.validate().map_err(|e| {
            CalError::Config(format!("simulator: {e}"))
        })?;

        if self.mcmc.phase1_iters == 0 || self.mcmc.phase2_iters == 0 {
            return Err(CalError::Config("sampler phases must be non-empty".into()));
        }
        if self.mcmc.burn_in >= self.mcmc.phase2_iters {
            return Err(CalError::Config(
                "burn-in must be shorter than the sampling phase".into(),
            ));
        }
        if !(self.predict.level > 0.0 && self.predict.level <= 1.0) || self.predict.draws == 0 {
            return Err(CalError::Config("predict needs level in (0, 1] and draws > 0".into()));
        }
        if !(self.validate.level > 0.0 && self.validate.level <= 1.0)
            || self.validate.n_reps == 0
            || self.validate.holdout_days <= 0
        {
            return Err(CalError::Config(
                "validate needs level in (0, 1], replicates, and a positive holdout".into(),
            ));
        }
        if self.screen.trajectories < 2 || self.screen.levels < 2 || self.screen.levels % 2 != 0 {
            return Err(CalError::Config(
                "screen needs at least two trajectories and an even level count".into(),
            ));
        }
        if self.screen.inputs.is_empty() {
            return Err(CalError::Config("screen needs at least one input".into()));
        }
        for s in &self.screen.inputs {
            if !s.lo.is_finite() || !s.hi.is_finite() || s.lo >= s.hi {
                return Err(CalError::Config(format!(
                    "screen input '{}' needs a finite range with lo < hi",
                    s.name
                )));
            }
        }
        if self.generate.n_days == 0 || self.generate.start_day == 0 {
            return Err(CalError::Config(
                "generate needs a 1-based start day and at least one day".into(),
            ));
        }
        if !(self.generate.sigma_err >= 0.0) || !(self.generate.discrepancy_amplitude >= 0.0) {
            return Err(CalError::Config(
                "generate noise and amplitude must be non-negative".into(),
            ));
        }
        if self.generate.theta_star.is_empty() {
            return Err(CalError::Config("generate needs theta_star values".into()));
        }

        let variant = self.model.variant;
        if variant.uses_emulator() {
            if self.emulator.columns.is_empty() {
                return Err(CalError::Config(format!(
                    "{variant} needs emulator columns"
                )));
            }
            if self.emulator.n_initial < 2 || self.emulator.cv_folds < 2 {
                return Err(CalError::Config(
                    "emulator needs at least two design points and two folds".into(),
                ));
            }
            if !(self.emulator.nugget_rel >= 0.0) || !self.emulator.q2_threshold.is_finite() {
                return Err(CalError::Config(
                    "emulator nugget must be non-negative and the threshold finite".into(),
                ));
            }
        }
        if variant.uses_discrepancy() && self.discrepancy.columns.is_empty() {
            return Err(CalError::Config(format!(
                "{variant} needs discrepancy columns"
            )));
        }
        if self.model.likelihood == LikelihoodMode::Full && !variant.uses_emulator() {
            return Err(CalError::Config(
                "the full likelihood applies to emulated variants only".into(),
            ));
        }
        Ok(())
    }

    /// Checks that input files referenced by data-reading workflows exist.
    pub fn check_inputs_exist(&self) -> Result<()> {
        if !self.data.field.exists() {
            return Err(CalError::Config(format!(
                "field data file {} does not exist",
                self.data.field.display()
            )));
        }
        Ok(())
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_ranges(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|p| (p.lo, p.hi)).collect()
    }

    /// Joint prior spec over calibration parameters and declared nuisances.
    pub fn prior_spec(&self) -> Result<PriorSpec> {
        let mut entries: Vec<(String, Prior)> = self
            .parameters
            .iter()
            .map(|p| (p.name.clone(), p.prior))
            .collect();
        for (name, prior) in &self.nuisance_priors {
            entries.push((name.clone(), *prior));
        }
        PriorSpec::new(entries).map_err(|e| CalError::Config(e.to_string()))
    }

    /// Sampler settings under this config, with an optional seed override.
    pub fn mcmc_settings(&self, seed_override: Option<u64>) -> McmcSettings {
        let mut settings = McmcSettings::new(seed_override.unwrap_or(self.seed));
        settings.phase1_iters = self.mcmc.phase1_iters;
        settings.phase2_iters = self.mcmc.phase2_iters;
        settings.burn_in = self.mcmc.burn_in;
        settings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    const MINIMAL: &str = r#"
seed = 42

[model]
variant = "m1"

[data]
field = "field.csv"

[[parameter]]
name = "eta"
lo = 0.043
hi = 0.243
prior = { dist = "gaussian", mean = 0.143, variance = 0.0004 }
"#;

    fn write_config(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let f = write_config(MINIMAL);
        let config = RunConfig::load(f.path()).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.model.variant, ModelVariant::M1);
        assert_eq!(config.model.likelihood, LikelihoodMode::Modular);
        assert_eq!(config.mcmc.phase1_iters, 3000);
        assert_eq!(config.screen.inputs.len(), 6);
        assert_eq!(config.theta_names(), vec!["eta".to_string()]);
        // Relative paths resolve against the config directory.
        assert!(config.data.field.is_absolute());
        assert!(config.check_inputs_exist().is_err());
    }

    #[test]
    fn missing_seed_is_rejected() {
        let f = write_config(&MINIMAL.replace("seed = 42", ""));
        let err = RunConfig::load(f.path()).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn improper_prior_is_rejected_at_load() {
        let bad = MINIMAL.replace("variance = 0.0004", "variance = -1.0");
        let f = write_config(&bad);
        assert!(RunConfig::load(f.path()).is_err());
    }

    #[test]
    fn degenerate_range_is_rejected() {
        let bad = MINIMAL.replace("hi = 0.243", "hi = 0.043");
        let f = write_config(&bad);
        assert!(RunConfig::load(f.path()).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_config(&format!("{MINIMAL}\nunknown_key = 1\n"));
        assert!(RunConfig::load(f.path()).is_err());
    }

    #[test]
    fn emulated_variant_requires_columns_and_full_mode_requires_emulator() {
        let m2 = MINIMAL.replace("variant = \"m1\"", "variant = \"m2\"");
        let with_empty = format!("{m2}\n[emulator]\ncolumns = []\n");
        let f = write_config(&with_empty);
        assert!(RunConfig::load(f.path()).is_err());

        let full_m1 = format!(
            "{}\n",
            MINIMAL.replace("variant = \"m1\"", "variant = \"m1\"\nlikelihood = \"full\"")
        );
        let f = write_config(&full_m1);
        assert!(RunConfig::load(f.path()).is_err());
    }

    #[test]
    fn nuisance_priors_join_the_spec() {
        let with_nuisance = format!(
            "{MINIMAL}\n[nuisance_priors]\nsigma_err2 = {{ dist = \"gamma\", shape = 2.0, scale = 100.0 }}\n"
        );
        let f = write_config(&with_nuisance);
        let config = RunConfig::load(f.path()).unwrap();
        let spec = config.prior_spec().unwrap();
        assert!(spec.get("sigma_err2").is_some());
        assert!(spec.get("eta").is_some());
    }
}
