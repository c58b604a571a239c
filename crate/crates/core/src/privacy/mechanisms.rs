//! Gaussian and Laplace output-perturbation mechanisms and their calibration.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// Multiplicative bump that turns the Gaussian mechanism's strict inequality
/// on the variance into an attained value.
pub const STRICT_BUMP: f64 = 1e-9;

/// The knobs of a release. `eps1`, `eps2` and the unsubscripted `delta` are
/// only used by the perturbed-Gram release and are zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    /// Gaussian mechanism on the cross-product or the estimate.
    pub eps: f64,
    /// Laplace noise on the shared lambda_min shift.
    pub eps1: f64,
    /// Gaussian noise on the Gram off-diagonals.
    pub eps2: f64,
    /// Delta of the Gram off-diagonal noise.
    pub delta: f64,
    /// Delta of the Gaussian mechanism on the cross-product or the estimate.
    pub delta1: f64,
    /// Failure probability of the noise-norm concentration event.
    pub delta2: f64,
}

fn in_unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl PrivacyBudget {
    pub fn method1(eps: f64, eps1: f64, eps2: f64, delta: f64, delta1: f64, delta2: f64) -> Result<Self> {
        let b = Self { eps, eps1, eps2, delta, delta1, delta2 };
        b.validate_method1()?;
        Ok(b)
    }

    pub fn method2(eps: f64, delta1: f64, delta2: f64) -> Result<Self> {
        let b = Self { eps, eps1: 0.0, eps2: 0.0, delta: 0.0, delta1, delta2 };
        b.validate_method2()?;
        Ok(b)
    }

    pub fn validate_method1(&self) -> Result<()> {
        self.validate_method2()?;
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("delta", self.delta)] {
            if !in_unit_open(v) {
                return Err(Error::BudgetInvalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn validate_method2(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("delta1", self.delta1), ("delta2", self.delta2)] {
            if !in_unit_open(v) {
                return Err(Error::BudgetInvalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Composed guarantee `(eps + eps1 + eps2, delta + delta1 + delta2)`.
    pub fn total(&self) -> (f64, f64) {
        (
            self.eps + self.eps1 + self.eps2,
            self.delta + self.delta1 + self.delta2,
        )
    }
}

/// `2 exp(-p/2)`, the smallest admissible `delta2` for `p` features.
pub fn delta2_floor(p: usize) -> f64 {
    2.0 * (-(p as f64) / 2.0).exp()
}

/// Variance for the Gaussian mechanism, `2 ln(1.25/delta) (sens/eps)^2`
/// bumped by [`STRICT_BUMP`].
pub fn gaussian_scale(sensitivity_l2: f64, eps: f64, delta: f64) -> Result<f64> {
    if !in_unit_open(eps) {
        return Err(Error::BudgetInvalid(format!("eps = {eps} must lie in (0, 1)")));
    }
    if !in_unit_open(delta) {
        return Err(Error::BudgetInvalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(sensitivity_l2 >= 0.0) || !sensitivity_l2.is_finite() {
        return Err(Error::BudgetInvalid(format!(
            "sensitivity must be finite and >= 0, got {sensitivity_l2}"
        )));
    }
    let ratio = sensitivity_l2 / eps;
    Ok(2.0 * (1.25 / delta).ln() * ratio * ratio * (1.0 + STRICT_BUMP))
}

/// Laplace scale `sens / eps`.
pub fn laplace_scale(sensitivity_l1: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::BudgetInvalid(format!("eps = {eps} must be positive")));
    }
    if !(sensitivity_l1 >= 0.0) || !sensitivity_l1.is_finite() {
        return Err(Error::BudgetInvalid(format!(
            "sensitivity must be finite and >= 0, got {sensitivity_l1}"
        )));
    }
    Ok(sensitivity_l1 / eps)
}

pub fn gaussian_draw<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * variance.sqrt()
}

/// One `Lap(scale)` draw by inverse CDF.
pub fn laplace_draw<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = Open01.sample(rng);
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, variance: f64) -> DVector<f64> {
    if variance == 0.0 {
        return DVector::zeros(dim);
    }
    DVector::from_fn(dim, |_, _| gaussian_draw(rng, variance))
}

/// I.i.d. `N(0, variance)` entries, deterministic in `seed`.
pub fn sample_gaussian_vector(dim: usize, variance: f64, seed: u64) -> DVector<f64> {
    assert!(variance >= 0.0, "variance must be non-negative");
    gaussian_vector(&mut rng::stream(seed, rng::label::ESTIMATE_NOISE), dim, variance)
}

pub fn sample_laplace_vector(dim: usize, scale: f64, seed: u64) -> DVector<f64> {
    let mut r = rng::stream(seed, rng::label::THETA1);
    DVector::from_fn(dim, |_, _| laplace_draw(&mut r, scale))
}
