//! Design of experiments for emulator training.
//!
//! The training design lives in the joint space of control variables and
//! calibration parameters. Control variables observed in the field are
//! usually correlated (time, irradiance, temperature move together), so a
//! space-filling design is built in a decorrelated representation: the
//! observed variables are centered, scaled, and rotated onto the principal
//! axes of their correlation matrix; a maximin Latin hypercube is drawn over
//! the projected ranges times the parameter box; and the variable part is
//! rotated back to physical coordinates. Rotated-back points may fall
//! slightly outside the observed bounding box; they are kept as-is, since
//! the simulator accepts them and clipping would distort the space-filling
//! properties.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CalError, Result};
use crate::sim::Simulator;

/// How a design point came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Part of the initial space-filling design.
    Initial,
    /// Added later by sequential enrichment.
    Sequential,
}

/// A training design over joint `(x, theta)` tuples in physical units.
#[derive(Debug, Clone)]
pub struct Design {
    points: Vec<Vec<f64>>,
    var_dim: usize,
    param_dim: usize,
    provenance: Vec<Provenance>,
    /// Per-coordinate normalization bounds: variables carry the built
    /// design's observed extent, parameters carry their declared ranges.
    bounds: Vec<(f64, f64)>,
}

impl Design {
    /// Assembles a design, validating dimensions and bounds.
    pub fn new(
        points: Vec<Vec<f64>>,
        var_dim: usize,
        param_dim: usize,
        provenance: Vec<Provenance>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let dim = var_dim + param_dim;
        if dim == 0 {
            return Err(CalError::invalid("design dimension must be positive"));
        }
        if points.iter().any(|p| p.len() != dim) {
            return Err(CalError::invalid(format!(
                "every design point must have dimension {dim}"
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CalError::invalid("design points must be finite"));
        }
        if provenance.len() != points.len() {
            return Err(CalError::invalid("provenance must match point count"));
        }
        if bounds.len() != dim {
            return Err(CalError::invalid(format!(
                "need {dim} normalization bounds, got {}",
                bounds.len()
            )));
        }
        if bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi) {
            return Err(CalError::invalid("normalization bounds must be finite with lo <= hi"));
        }
        Ok(Design {
            points,
            var_dim,
            param_dim,
            provenance,
            bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.var_dim + self.param_dim
    }

    pub fn var_dim(&self) -> usize {
        self.var_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Splits a point into its variable and parameter parts.
    pub fn split<'a>(&self, point: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        point.split_at(self.var_dim)
    }

    /// Appends a point (normalization bounds stay fixed).
    pub fn push(&mut self, point: Vec<f64>, provenance: Provenance) -> Result<()> {
        if point.len() != self.dim() {
            return Err(CalError::invalid(format!(
                "appended point must have dimension {}",
                self.dim()
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(CalError::invalid("appended point must be finite"));
        }
        self.points.push(point);
        self.provenance.push(provenance);
        Ok(())
    }

    /// Maps one coordinate into normalized units. A degenerate bound maps
    /// everything to 0.5 so constant coordinates cannot poison distances.
    pub fn normalize_coord(&self, j: usize, v: f64) -> f64 {
        let (lo, hi) = self.bounds[j];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    /// Normalizes a full `(x, theta)` tuple.
    pub fn normalize(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .enumerate()
            .map(|(j, &v)| self.normalize_coord(j, v))
            .collect()
    }

    /// All design points in normalized units.
    pub fn normalized_points(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| self.normalize(p)).collect()
    }
}

/// Minimum pairwise Euclidean distance of a point set.
fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// One seeded random Latin hypercube on `[0, 1]^dim`.
pub fn lhs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_lhs(n, dim, &mut rng)
}

/// One random Latin hypercube on the unit cube: per column, a random
/// permutation of strata with a uniform draw inside each stratum.
fn random_lhs(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..dim {
        strata.shuffle(rng);
        for (i, point) in points.iter_mut().enumerate() {
            let u: f64 = rng.random::<f64>();
            point[j] = (strata[i] as f64 + u) / n as f64;
        }
    }
    points
}

/// Maximin Latin hypercube on `[0, 1]^dim`.
///
/// Draws `n_candidates` random Latin hypercubes and keeps the one whose
/// minimum pairwise distance is largest (first wins ties). Every column of
/// the result has exactly one point per stratum `[i/n, (i+1)/n)`.
/// Deterministic for a given seed.
pub fn maximin_lhs(n: usize, dim: usize, seed: u64, n_candidates: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || dim == 0 {
        return Err(CalError::invalid("lhs needs n >= 1 and dim >= 1"));
    }
    if n_candidates == 0 {
        return Err(CalError::invalid("lhs needs at least one candidate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..n_candidates {
        let cand = random_lhs(n, dim, &mut rng);
        let d = min_pairwise_distance(&cand);
        if best.as_ref().map_or(true, |(bd, _)| d > *bd) {
            best = Some((d, cand));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Centering, scaling, and rotation onto principal axes of the observed
/// control variables.
#[derive(Debug, Clone)]
pub struct PcaTransform {
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Columns are orthonormal eigenvectors of the correlation matrix,
    /// ordered by descending eigenvalue with a canonical sign.
    t: DMatrix<f64>,
    /// Extent of the projected training data along each axis.
    axis_ranges: Vec<(f64, f64)>,
}

impl PcaTransform {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn axis_ranges(&self) -> &[(f64, f64)] {
        &self.axis_ranges
    }

    /// Maps a projected point back to physical coordinates.
    pub fn to_physical(&self, projected: &[f64]) -> Vec<f64> {
        let p = DVector::from_column_slice(projected);
        let z = &self.t * p;
        z.iter()
            .enumerate()
            .map(|(i, zi)| self.means[i] + self.sds[i] * zi)
            .collect()
    }

    /// Projects a physical point onto the principal axes.
    pub fn project(&self, physical: &[f64]) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            physical
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - self.means[i]) / self.sds[i]),
        );
        (self.t.transpose() * z).iter().copied().collect()
    }
}

/// Builds the decorrelating transform for an observation matrix (rows are
/// observations, columns are variables).
///
/// Columns are centered and scaled to unit sample variance; the correlation
/// matrix is eigendecomposed; eigenpairs are sorted by descending eigenvalue
/// and each eigenvector's sign is fixed so its largest-magnitude entry is
/// positive, making the transform deterministic. A constant column cannot be
/// scaled and is reported by name.
pub fn pca_decorrelate(x: &DMatrix<f64>, names: &[&str]) -> Result<PcaTransform> {
    let (n, d) = x.shape();
    if d == 0 {
        return Err(CalError::invalid("need at least one column"));
    }
    if n < 2 {
        return Err(CalError::invalid("need at least two observations"));
    }
    if names.len() != d {
        return Err(CalError::invalid(format!(
            "need {d} column names, got {}",
            names.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CalError::data("observations must be finite"));
    }

    let means: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut sds = Vec::with_capacity(d);
    for j in 0..d {
        let var = x
            .column(j)
            .iter()
            .map(|v| (v - means[j]).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        if var <= 0.0 {
            return Err(CalError::data(format!(
                "column '{}' is constant and cannot be decorrelated",
                names[j]
            )));
        }
        sds.push(var.sqrt());
    }

    let z = DMatrix::from_fn(n, d, |i, j| (x[(i, j)] - means[j]) / sds[j]);
    let corr = z.transpose() * &z / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(corr);

    // Sort eigenpairs by descending eigenvalue; fix each eigenvector's sign.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut t = DMatrix::zeros(d, d);
    for (new_j, &old_j) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(old_j);
        let pivot = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        t.set_column(new_j, &(col * sign));
    }

    let proj = &z * &t;
    let axis_ranges: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col = proj.column(j);
            (col.min(), col.max())
        })
        .collect();

    Ok(PcaTransform {
        means,
        sds,
        t,
        axis_ranges,
    })
}

/// Builds the initial training design: a maximin Latin hypercube over the
/// projected-variable ranges and the parameter box, with the variable part
/// rotated back to physical coordinates.
///
/// Parameter coordinates land exactly inside their declared ranges, which
/// also become the parameter normalization bounds; variable bounds are the
/// built design's observed extent.
pub fn build_design(
    transform: &PcaTransform,
    param_ranges: &[(f64, f64)],
    n: usize,
    seed: u64,
    n_candidates: usize,
) -> Result<Design> {
    let d = transform.dim();
    let p = param_ranges.len();
    if p == 0 {
        return Err(CalError::invalid("need at least one parameter range"));
    }
    if param_ranges
        .iter()
        .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
    {
        return Err(CalError::invalid("parameter ranges must be finite with lo < hi"));
    }
    let lhs = maximin_lhs(n, d + p, seed, n_candidates)?;

    let mut points = Vec::with_capacity(n);
    for unit in &lhs {
        let projected: Vec<f64> = transform
            .axis_ranges()
            .iter()
            .zip(unit.iter())
            .map(|((lo, hi), u)| lo + u * (hi - lo))
            .collect();
        let mut point = transform.to_physical(&projected);
        for (k, (lo, hi)) in param_ranges.iter().enumerate() {
            point.push(lo + unit[d + k] * (hi - lo));
        }
        points.push(point);
    }

    let mut bounds = Vec::with_capacity(d + p);
    for j in 0..d {
        let lo = points.iter().map(|pt| pt[j]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|pt| pt[j]).fold(f64::NEG_INFINITY, f64::max);
        bounds.push((lo, hi));
    }
    bounds.extend_from_slice(param_ranges);

    Design::new(points, d, p, vec![Provenance::Initial; n], bounds)
}

/// Runs the simulator over every design point, in order.
///
/// A failing run aborts with the failing point's index attached.
pub fn run_design(simulator: &dyn Simulator, design: &Design) -> Result<DVector<f64>> {
    let mut out = Vec::with_capacity(design.len());
    for (index, point) in design.points().iter().enumerate() {
        let (x, theta) = design.split(point);
        let y = simulator.run(x, theta).map_err(|e| CalError::Simulator {
            index,
            message: e.to_string(),
        })?;
        if !y.is_finite() {
            return Err(CalError::Simulator {
                index,
                message: format!("non-finite output {y}"),
            });
        }
        out.push(y);
    }
    Ok(DVector::from_vec(out))
}
