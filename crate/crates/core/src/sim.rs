//! Simulator abstraction: a deterministic scalar code `f(x, theta)`.

use crate::error::Result;

/// A computer code mapping control variables `x` and calibration parameters
/// `theta` to one scalar output. Implementations must be deterministic.
pub trait Simulator: Send + Sync {
    fn run(&self, x: &[f64], theta: &[f64]) -> Result<f64>;
}

/// Adapter turning a closure into a [`Simulator`].
pub struct FnSimulator<F>(pub F);

impl<F> Simulator for FnSimulator<F>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync,
{
    fn run(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        (self.0)(x, theta)
    }
}

impl<S: Simulator + ?Sized> Simulator for &S {
    fn run(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        (**self).run(x, theta)
    }
}

impl<S: Simulator + ?Sized> Simulator for std::sync::Arc<S> {
    fn run(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        (**self).run(x, theta)
    }
}
