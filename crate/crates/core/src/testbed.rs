//! Built-in simulators with known ground truth: a photovoltaic-style power
//! surrogate, small analytic codes, Morris screening, and synthetic
//! field-data generation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CalError, Result};
use crate::models::FieldDataSet;
use crate::seeding::child_seed;
use crate::sim::{FnSimulator, Simulator};

/// Reference calibration parameters of the PV surrogate:
/// `(efficiency eta, thermal coefficient mu_t %/K, incidence factor a_r)`.
pub const PV_THETA_STAR: [f64; 3] = [0.143, -0.4, 0.17];

/// Plant geometry, reference values for the inactive parameters, and site
/// coordinates of the PV surrogate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PvSurrogateConfig {
    pub panel_count: u32,
    pub panel_area_m2: f64,
    /// Thermal reference temperature (deg C) when theta carries 3 entries.
    pub n_t: f64,
    /// Wiring/soiling loss factor when theta carries 3 entries.
    pub a_l: f64,
    /// Incidence reference factor when theta carries 3 entries.
    pub n_inc: f64,
    /// Site latitude in degrees north, used when input rows omit it.
    pub latitude: f64,
    /// Site longitude in degrees east, used when input rows omit it.
    pub longitude: f64,
}

impl Default for PvSurrogateConfig {
    fn default() -> Self {
        PvSurrogateConfig {
            panel_count: 12,
            panel_area_m2: 1.6,
            n_t: 45.0,
            a_l: 0.2,
            n_inc: 0.96,
            latitude: 44.0,
            longitude: 5.0,
        }
    }
}

impl PvSurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.panel_count == 0 {
            return Err(CalError::invalid("panel count must be positive"));
        }
        if !(self.panel_area_m2 > 0.0) || !self.panel_area_m2.is_finite() {
            return Err(CalError::invalid("panel area must be positive and finite"));
        }
        if !self.n_t.is_finite() || !self.a_l.is_finite() || !self.n_inc.is_finite() {
            return Err(CalError::invalid("reference parameters must be finite"));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(CalError::invalid("latitude must lie in [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(CalError::invalid("longitude must lie in [-180, 180]"));
        }
        Ok(())
    }
}

/// Power output in watts of a horizontal PV plant under a pinned closed-form
/// model. This is a documented stand-in with simple textbook geometry, not a
/// detailed electrical solver; its value is that every quantity is exactly
/// reproducible.
///
/// Input row: `(t, L, l, I_g, I_d, T_e)` with `t` seconds since the start of
/// the year (UTC), `L`/`l` site latitude/longitude in degrees, `I_g`/`I_d`
/// global/diffuse horizontal irradiance in W/m^2, and `T_e` ambient
/// temperature in deg C. A 4-entry row `(t, I_g, I_d, T_e)` takes the site
/// coordinates from the config.
///
/// Parameters: `(eta, mu_t, a_r)` with the inactive `(n_t, a_l, n_inc)`
/// taken from the config, or all six explicitly.
///
/// Steps, with angles in degrees and mean solar time:
/// declination `d = 23.45 sin(2 pi (284 + day) / 365)`;
/// hour angle `w = 15 (solar_hour - 12)` where
/// `solar_hour = (t mod 86400)/3600 + l/15`;
/// zenith cosine `cos_tz = sin L sin d + cos L cos d cos w`, non-positive
/// means night and zero power;
/// beam `I_b = max(I_g - I_d, 0)`;
/// incidence modifier `f = clamp(1 - a_r (1/cos_tz - 1), 0, 1)`;
/// effective irradiance `G = n_inc (f I_b + I_d) + 0.1 a_l I_g`;
/// cell temperature `T_c = T_e + I_g (n_t - 20)/800`;
/// power `P = count * area * eta * G * (1 + (mu_t/100)(T_c - 25))`,
/// clamped at zero.
pub fn pv_power(x: &[f64], theta: &[f64], config: &PvSurrogateConfig) -> Result<f64> {
    config.validate()?;
    let (t, lat, lon, i_g, i_d, t_e) = match x.len() {
        6 => (x[0], x[1], x[2], x[3], x[4], x[5]),
        4 => (x[0], config.latitude, config.longitude, x[1], x[2], x[3]),
        n => {
            return Err(CalError::invalid(format!(
                "input row needs 4 or 6 entries, got {n}"
            )))
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CalError::invalid("input row must be finite"));
    }
    let cos_tz = zenith_cosine(t, lat, lon);
    pv_power_from_zenith(cos_tz, i_g, i_d, t_e, theta, config)
}

/// Cosine of the solar zenith angle at UTC second-of-year `t` for a site at
/// the given coordinates, under mean solar time. Non-positive means the sun
/// is below the horizon.
pub fn zenith_cosine(t: f64, lat_deg: f64, lon_deg: f64) -> f64 {
    let day = (t / 86_400.0).floor() + 1.0;
    let decl_deg = 23.45 * (2.0 * std::f64::consts::PI * (284.0 + day) / 365.0).sin();
    let solar_hour = t.rem_euclid(86_400.0) / 3600.0 + lon_deg / 15.0;
    let omega_deg = 15.0 * (solar_hour - 12.0);
    lat_deg.to_radians().sin() * decl_deg.to_radians().sin()
        + lat_deg.to_radians().cos() * decl_deg.to_radians().cos() * omega_deg.to_radians().cos()
}

/// The surrogate's electrical part, fed the zenith cosine directly. Smooth
/// in `(cos_tz, I_g, I_d, T_e)` and in theta, which makes this 4-variable
/// form the natural emulation target.
pub fn pv_power_from_zenith(
    cos_tz: f64,
    i_g: f64,
    i_d: f64,
    t_e: f64,
    theta: &[f64],
    config: &PvSurrogateConfig,
) -> Result<f64> {
    if !cos_tz.is_finite() || !i_g.is_finite() || !i_d.is_finite() || !t_e.is_finite() {
        return Err(CalError::invalid("inputs must be finite"));
    }
    if i_g < 0.0 || i_d < 0.0 {
        return Err(CalError::invalid("irradiance must be non-negative"));
    }
    let (eta, mu_t, a_r, n_t, a_l, n_inc) = match theta.len() {
        3 => (
            theta[0],
            theta[1],
            theta[2],
            config.n_t,
            config.a_l,
            config.n_inc,
        ),
        6 => (theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]),
        n => {
            return Err(CalError::invalid(format!(
                "theta needs 3 or 6 entries, got {n}"
            )))
        }
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(CalError::invalid("theta must be finite"));
    }
    if cos_tz <= 0.0 {
        return Ok(0.0);
    }
    let i_b = (i_g - i_d).max(0.0);
    let f = (1.0 - a_r * (1.0 / cos_tz - 1.0)).clamp(0.0, 1.0);
    let g = n_inc * (f * i_b + i_d) + 0.1 * a_l * i_g;
    let t_c = t_e + i_g * (n_t - 20.0) / 800.0;
    let p = config.panel_count as f64
        * config.panel_area_m2
        * eta
        * g
        * (1.0 + (mu_t / 100.0) * (t_c - 25.0));
    Ok(p.max(0.0))
}

/// The PV surrogate wrapped as a simulator over `(eta, mu_t, a_r)`, taking
/// `(t, L, l, I_g, I_d, T_e)` or `(t, I_g, I_d, T_e)` input rows.
pub fn pv_simulator(config: PvSurrogateConfig) -> Arc<dyn Simulator> {
    Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
        pv_power(x, theta, &config)
    }))
}

/// The zenith-space surrogate as a simulator over `(eta, mu_t, a_r)`,
/// taking `(cos_tz, I_g, I_d, T_e)` rows; this is the form training designs
/// are built over.
pub fn pv_zenith_simulator(config: PvSurrogateConfig) -> Arc<dyn Simulator> {
    Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
        if x.len() != 4 {
            return Err(CalError::invalid(format!(
                "zenith-space row needs 4 entries, got {}",
                x.len()
            )));
        }
        pv_power_from_zenith(x[0], x[1], x[2], x[3], theta, &config)
    }))
}

/// Standard column order of generated PV inputs:
/// `(t, L, l, cos_tz, I_g, I_d, T_e)`.
pub const PV_INPUT_COLUMNS: [&str; 7] = ["t", "L", "l", "cos_tz", "I_g", "I_d", "T_e"];

/// Hourly daytime input rows for the PV surrogate over consecutive days of
/// the year, with deterministic clear-sky weather: irradiance proportional
/// to the zenith cosine with a fixed diffuse fraction, and a smooth daily
/// temperature swing. Night hours (zenith cosine below 0.05) are skipped.
///
/// Columns follow [`PV_INPUT_COLUMNS`]. `start_day` is 1-based.
pub fn pv_hourly_inputs(
    start_day: u32,
    n_days: u32,
    config: &PvSurrogateConfig,
) -> Result<(Vec<String>, DMatrix<f64>)> {
    config.validate()?;
    if start_day == 0 || n_days == 0 {
        return Err(CalError::invalid("need a 1-based start day and at least one day"));
    }
    let mut rows: Vec<[f64; 7]> = Vec::new();
    for day in start_day..start_day + n_days {
        for hour in 0..24 {
            let t = f64::from(day - 1) * 86_400.0 + f64::from(hour) * 3600.0;
            let cos_tz = zenith_cosine(t, config.latitude, config.longitude);
            if cos_tz < 0.05 {
                continue;
            }
            let i_g = 1000.0 * cos_tz;
            let i_d = 0.2 * i_g + 20.0;
            let solar_hour = t.rem_euclid(86_400.0) / 3600.0 + config.longitude / 15.0;
            let t_e = 12.0
                + 8.0 * (std::f64::consts::PI * (solar_hour - 6.0) / 12.0).sin()
                + 0.02 * f64::from(day);
            rows.push([
                t,
                config.latitude,
                config.longitude,
                cos_tz,
                i_g,
                i_d,
                t_e,
            ]);
        }
    }
    if rows.is_empty() {
        return Err(CalError::invalid(
            "no daytime hours in the requested window; check site coordinates",
        ));
    }
    let x = DMatrix::from_fn(rows.len(), 7, |i, j| rows[i][j]);
    let names = PV_INPUT_COLUMNS.iter().map(|s| s.to_string()).collect();
    Ok((names, x))
}

/// PV simulator over datasets with named columns: looks up `t`, `I_g`,
/// `I_d`, `T_e` (required) and `L`, `l` (falling back to the config site),
/// so rows may carry extra columns in any order.
pub fn pv_named_simulator(
    names: &[String],
    config: PvSurrogateConfig,
) -> Result<Arc<dyn Simulator>> {
    let find = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CalError::invalid(format!("dataset has no column named '{name}'")))
    };
    let i_t = find("t")?;
    let i_ig = find("I_g")?;
    let i_id = find("I_d")?;
    let i_te = find("T_e")?;
    let i_lat = names.iter().position(|n| n == "L");
    let i_lon = names.iter().position(|n| n == "l");
    Ok(Arc::new(FnSimulator(move |x: &[f64], theta: &[f64]| {
        let lat = i_lat.map_or(config.latitude, |j| x[j]);
        let lon = i_lon.map_or(config.longitude, |j| x[j]);
        let row = [x[i_t], lat, lon, x[i_ig], x[i_id], x[i_te]];
        pv_power(&row, theta, &config)
    })))
}

/// A smooth day-periodic discrepancy shape: a half-sine bump over each day,
/// peaking at civil noon, as a function of the row's time column.
pub fn daily_bump_shape() -> Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> {
    Arc::new(|row: &[f64]| (std::f64::consts::PI * row[0].rem_euclid(86_400.0) / 86_400.0).sin())
}

/// Small analytic codes with known structure, by name:
/// `"constant"` is `theta_1` everywhere, `"linear"` is `theta_1 + theta_2 x`,
/// `"nonlinear"` is `theta_1 sin(2 pi x) + theta_2`.
///
/// For the nonlinear code both parameters are identifiable from data spread
/// over one period of `x`: `theta_2` sets the level, `theta_1` the swing.
pub fn analytic_codes(name: &str) -> Result<Arc<dyn Simulator>> {
    match name {
        "constant" => Ok(Arc::new(FnSimulator(|_x: &[f64], t: &[f64]| Ok(t[0])))),
        "linear" => Ok(Arc::new(FnSimulator(|x: &[f64], t: &[f64]| {
            Ok(t[0] + t[1] * x[0])
        }))),
        "nonlinear" => Ok(Arc::new(FnSimulator(|x: &[f64], t: &[f64]| {
            Ok(t[0] * (2.0 * std::f64::consts::PI * x[0]).sin() + t[1])
        }))),
        other => Err(CalError::invalid(format!("unknown analytic code '{other}'"))),
    }
}

/// Ground-truth recipe for synthetic field data: generating parameters,
/// noise level, an optional injected discrepancy, and the input grid.
///
/// Column 0 of the inputs is the time axis and must be strictly increasing.
#[derive(Clone)]
pub struct SyntheticScenario {
    names: Vec<String>,
    x: DMatrix<f64>,
    theta_star: Vec<f64>,
    sigma_err: f64,
    discrepancy: Option<(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, f64)>,
    seed: u64,
}

impl std::fmt::Debug for SyntheticScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticScenario")
            .field("n", &self.x.nrows())
            .field("theta_star", &self.theta_star)
            .field("sigma_err", &self.sigma_err)
            .field("has_discrepancy", &self.discrepancy.is_some())
            .field("seed", &self.seed)
            .finish()
    }
}

impl SyntheticScenario {
    pub fn new(
        names: Vec<String>,
        x: DMatrix<f64>,
        theta_star: Vec<f64>,
        sigma_err: f64,
        seed: u64,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(CalError::invalid("scenario needs at least one input row"));
        }
        if names.len() != x.ncols() {
            return Err(CalError::invalid("one name per input column"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CalError::invalid("scenario inputs must be finite"));
        }
        for i in 1..x.nrows() {
            if x[(i, 0)] <= x[(i - 1, 0)] {
                return Err(CalError::invalid(
                    "scenario time grid must be strictly increasing",
                ));
            }
        }
        if theta_star.is_empty() || theta_star.iter().any(|v| !v.is_finite()) {
            return Err(CalError::invalid(
                "generating parameters must be non-empty and finite",
            ));
        }
        if !(sigma_err >= 0.0) || !sigma_err.is_finite() {
            return Err(CalError::invalid("noise level must be non-negative"));
        }
        Ok(SyntheticScenario {
            names,
            x,
            theta_star,
            sigma_err,
            discrepancy: None,
            seed,
        })
    }

    /// Scenario over a single input column `x` spanning `[0, 1]`, suited to
    /// the analytic codes.
    pub fn on_unit_grid(n: usize, theta_star: Vec<f64>, sigma_err: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(CalError::invalid("grid needs at least two points"));
        }
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        SyntheticScenario::new(vec!["x".to_string()], x, theta_star, sigma_err, seed)
    }

    /// Adds an injected discrepancy `amplitude * shape(x_row)`.
    pub fn with_discrepancy(
        mut self,
        shape: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        amplitude: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(CalError::invalid("amplitude must be non-negative"));
        }
        self.discrepancy = Some((shape, amplitude));
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn sigma_err(&self) -> f64 {
        self.sigma_err
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws one synthetic dataset: `y = f(x, theta*) + discrepancy + noise`,
/// bit-identical for a given scenario seed.
pub fn generate_field_data(
    scenario: &SyntheticScenario,
    simulator: &dyn Simulator,
) -> Result<FieldDataSet> {
    let n = scenario.x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(scenario.seed, "field-data"));
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let row: Vec<f64> = scenario.x.row(i).iter().copied().collect();
        let mut v = simulator.run(&row, &scenario.theta_star)?;
        if let Some((shape, amplitude)) = &scenario.discrepancy {
            v += amplitude * shape(&row);
        }
        // One variate per row regardless of the noise level, so scenarios
        // differing only in sigma share the same noise pattern.
        let z: f64 = StandardNormal.sample(&mut rng);
        y[i] = v + scenario.sigma_err * z;
    }
    FieldDataSet::new(scenario.names.clone(), scenario.x.clone(), y)
}

/// Elementary-effects summary per input: mean absolute effect and effect
/// standard deviation, both in the normalized input space.
#[derive(Debug, Clone)]
pub struct MorrisResult {
    pub mu_star: Vec<f64>,
    pub sigma: Vec<f64>,
    pub trajectories: usize,
    pub levels: usize,
}

impl MorrisResult {
    /// Input indices sorted by decreasing mean absolute effect.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mu_star.len()).collect();
        idx.sort_by(|&a, &b| self.mu_star[b].total_cmp(&self.mu_star[a]));
        idx
    }
}

/// Morris screening with `r` randomized one-at-a-time trajectories on a
/// `levels`-level grid over the unit cube, inputs mapped to the given
/// physical ranges before each evaluation. Elementary effects use the
/// standard step `delta = levels / (2 (levels - 1))`.
pub fn morris_screening<F>(
    f: F,
    ranges: &[(f64, f64)],
    r: usize,
    levels: usize,
    seed: u64,
) -> Result<MorrisResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if ranges.is_empty() {
        return Err(CalError::invalid("need at least one input range"));
    }
    if ranges
        .iter()
        .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
    {
        return Err(CalError::invalid("ranges must be finite with lo < hi"));
    }
    if r < 2 {
        return Err(CalError::invalid("need at least two trajectories"));
    }
    if levels < 2 || levels % 2 != 0 {
        return Err(CalError::invalid("levels must be even and at least two"));
    }
    let k = ranges.len();
    let p = levels;
    let delta = p as f64 / (2.0 * (p - 1) as f64);
    // Base grid points from which a +delta step stays inside [0, 1].
    let n_base = p / 2;
    let denorm = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(ranges)
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "morris"));
    let mut effects: Vec<Vec<f64>> = vec![Vec::with_capacity(r); k];
    for traj in 0..r {
        let mut point: Vec<f64> = Vec::with_capacity(k);
        let mut direction: Vec<f64> = Vec::with_capacity(k);
        for _ in 0..k {
            let base = rng.random_range(0..n_base) as f64 / (p - 1) as f64;
            let dir: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            // A negative direction starts from the top of the step instead.
            point.push(if dir > 0.0 { base } else { base + delta });
            direction.push(dir);
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);

        let eval = |u: &[f64]| -> Result<f64> {
            f(&denorm(u)).map_err(|e| CalError::Simulator {
                index: traj,
                message: format!("morris trajectory failed: {e}"),
            })
        };
        let mut current = eval(&point)?;
        for &j in &order {
            point[j] += direction[j] * delta;
            let next = eval(&point)?;
            effects[j].push((next - current) / (direction[j] * delta));
            current = next;
        }
    }

    let mu_star: Vec<f64> = effects
        .iter()
        .map(|ee| ee.iter().map(|e| e.abs()).sum::<f64>() / r as f64)
        .collect();
    let sigma: Vec<f64> = effects
        .iter()
        .map(|ee| {
            let m = ee.iter().sum::<f64>() / r as f64;
            (ee.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
        })
        .collect();
    Ok(MorrisResult {
        mu_star,
        sigma,
        trajectories: r,
        levels,
    })
}
