//! Derivative-free local minimization (Nelder-Mead simplex).
//!
//! Used for hyperparameter fitting and the point estimators. Objectives may
//! return non-finite values (out-of-support regions); those are treated as
//! worst-possible so the simplex backs away from them.

/// Stopping controls for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    /// Maximum number of objective evaluations.
    pub max_evals: usize,
    /// Stop when the spread of simplex objective values falls below this.
    pub tol_f: f64,
    /// Stop when the simplex diameter (max vertex distance) falls below this.
    pub tol_x: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            max_evals: 2000,
            tol_f: 1e-10,
            tol_x: 1e-10,
        }
    }
}

/// Result of a Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct NmResult {
    /// Best vertex found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub f: f64,
    /// Whether a tolerance (rather than the evaluation cap) stopped the run.
    pub converged: bool,
    /// Objective evaluations spent.
    pub evals: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` starting from `x0` with an initial simplex built by
/// displacing each coordinate by `steps[i]`.
///
/// Standard coefficients: reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5. Deterministic: no randomness is involved.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: NmOptions) -> NmResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len(), "steps must match dimension");
    let dim = x0.len();
    assert!(dim > 0, "dimension must be positive");

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    // Vertices paired with objective values; kept sorted ascending by value.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    order(&mut simplex);

    let mut converged = false;
    while evals < opts.max_evals {
        let spread = simplex[dim].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        if (spread.is_finite() && spread < opts.tol_f) || diameter < opts.tol_x {
            converged = true;
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; dim];
        for (v, _) in simplex.iter().take(dim) {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let worst = simplex[dim].clone();

        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = lerp(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            // Try to expand further along the reflection direction.
            let xe = lerp(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            // Contract toward the better of the reflected/worst points.
            let (xc, side_ok) = if fr < worst.1 {
                (lerp(0.5), fr)
            } else {
                (lerp(-0.5), worst.1)
            };
            let fc = eval(&xc, &mut evals);
            if fc < side_ok {
                simplex[dim] = (xc, fc);
            } else {
                // Shrink every vertex toward the current best.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for (x, b) in entry.0.iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    entry.1 = eval(&entry.0.clone(), &mut evals);
                }
            }
        }
        order(&mut simplex);
    }

    NmResult {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        converged,
        evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
        let res = nelder_mead(f, &[0.0, 0.0], &[0.5, 0.5], NmOptions::default());
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-4, "x0 = {}", res.x[0]);
        assert!((res.x[1] + 1.0).abs() < 1e-4, "x1 = {}", res.x[1]);
    }

    #[test]
    fn minimizes_rosenbrock_from_standard_start() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res = nelder_mead(
            f,
            &[-1.2, 1.0],
            &[0.5, 0.5],
            NmOptions {
                max_evals: 5000,
                ..NmOptions::default()
            },
        );
        assert!((res.x[0] - 1.0).abs() < 1e-3);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn backs_away_from_non_finite_regions() {
        // Objective is -inf-guarded: NaN outside x > 0.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::NAN
            } else {
                (x[0].ln()).powi(2)
            }
        };
        let res = nelder_mead(f, &[0.5], &[0.4], NmOptions::default());
        assert!((res.x[0] - 1.0).abs() < 1e-3);
    }
}
