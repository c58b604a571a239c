//! Data-dependent (local) sensitivity calibration.
//!
//! All bounds are evaluated at the observed dataset. The scalars involved:
//!
//! * `eta^2 = B^2 / (C_min^2 - B^2)`, the worst relative change of a column
//!   norm when one row is replaced;
//! * `zeta = 2 p sigma^2 / (1 - sqrt((2/p) ln(2/delta2)))`, the
//!   concentration constant for the norm of a Gaussian noise vector, valid
//!   with probability `1 - delta2` when `delta2 > 2 exp(-p/2)`;
//! * `gamma = 2 lambda_max(Σ') - lambda_min(Σ')`, the largest eigenvalue of
//!   `G'` when `s = lambda_min(Σ')`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{ModelOracle, NormBounds, NormalizedDesign};
use crate::error::{Error, Result};
use crate::knockoff::GramSpectrum;
use crate::privacy::mechanisms::{delta2_floor, PrivacyBudget};

/// Relative tolerance on `B / eta = sqrt(C_min^2 - B^2)`.
const RATIO_IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SensitivityContext {
    pub eta2: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub bounds: NormBounds,
    pub oracle: ModelOracle,
    pub spectrum: GramSpectrum,
    /// `||X^T X||_F` of the raw (unnormalized) design.
    pub frobenius_sigma_raw: f64,
    pub p: usize,
    pub delta2: f64,
}

/// Frobenius norm of the raw Gram matrix `X^T X = D^-1 Σ' D^-1`.
pub fn raw_gram_frobenius(nd: &NormalizedDesign, spectrum: &GramSpectrum) -> f64 {
    let d = nd.normalizer();
    let sigma = &spectrum.sigma_prime;
    let p = sigma.nrows();
    let mut acc = 0.0;
    for j in 0..p {
        for i in 0..p {
            let v = sigma[(i, j)] / (d[i] * d[j]);
            acc += v * v;
        }
    }
    acc.sqrt()
}

pub fn zeta(p: usize, sigma2: f64, delta2: f64) -> Result<f64> {
    let floor = delta2_floor(p);
    if !(delta2 > floor) {
        return Err(Error::DeltaTooSmall { delta2, floor, p });
    }
    let denom = 1.0 - ((2.0 / p as f64) * (2.0 / delta2).ln()).sqrt();
    if !(denom > 0.0) {
        return Err(Error::DeltaTooSmall { delta2, floor, p });
    }
    Ok(2.0 * p as f64 * sigma2 / denom)
}

pub fn build_sensitivity_context(
    bounds: NormBounds,
    oracle: &ModelOracle,
    spectrum: &GramSpectrum,
    raw_gram_frobenius: f64,
    budget: &PrivacyBudget,
    p: usize,
) -> Result<SensitivityContext> {
    if spectrum.p() != p {
        return Err(Error::DimensionMismatch {
            what: "Gram spectrum dimension vs p",
            expected: p,
            found: spectrum.p(),
        });
    }
    let NormBounds { row_bound: b, col_min: c } = NormBounds::new(bounds.row_bound, bounds.col_min)?;
    let eta2 = b * b / (c * c - b * b);
    let zeta = zeta(p, oracle.sigma2_bound, budget.delta2)?;
    let gamma = 2.0 * spectrum.lambda_max - spectrum.lambda_min;
    Ok(SensitivityContext {
        eta2,
        zeta,
        gamma,
        bounds,
        oracle: oracle.clone(),
        spectrum: spectrum.clone(),
        frobenius_sigma_raw: raw_gram_frobenius,
        p,
        delta2: budget.delta2,
    })
}

impl SensitivityContext {
    fn eta(&self) -> f64 {
        self.eta2.sqrt()
    }

    /// `B / eta`, checked against `sqrt(C_min^2 - B^2)`.
    fn b_over_eta(&self) -> f64 {
        let NormBounds { row_bound: b, col_min: c } = self.bounds;
        let direct = (c * c - b * b).sqrt();
        let ratio = b / self.eta();
        assert!(
            ((ratio - direct) / direct).abs() <= RATIO_IDENTITY_TOL,
            "inconsistent norm bounds: B/eta = {ratio}, sqrt(C^2 - B^2) = {direct}"
        );
        ratio
    }
}

/// `(lambda_min sensitivity, Gram Frobenius sensitivity)`:
/// `eta^2 (1 + lambda_min(Σ'))` and `eta^2 (sqrt 2 + ||Σ'||_F)`.
pub fn gram_sensitivities(ctx: &SensitivityContext) -> (f64, f64) {
    (
        ctx.eta2 * (1.0 + ctx.spectrum.lambda_min),
        ctx.eta2 * (std::f64::consts::SQRT_2 + ctx.spectrum.frobenius_norm),
    )
}

/// Terms of the cross-product sensitivity, kept separate for diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CrossprodSensitivity {
    /// Noise part, `zeta^1/2 (2 sqrt(gamma) + eta (3 + 2 lambda_max + lambda_min)^1/2)`.
    pub noise_term: f64,
    /// Signal part, proportional to `||beta||`.
    pub signal_term: f64,
}

impl CrossprodSensitivity {
    pub fn total(&self) -> f64 {
        self.noise_term + self.signal_term
    }
}

pub fn method1_crossprod_terms(ctx: &SensitivityContext) -> CrossprodSensitivity {
    let NormBounds { row_bound: b, col_min: c } = ctx.bounds;
    let eta = ctx.eta();
    let (lmin, lmax) = (ctx.spectrum.lambda_min, ctx.spectrum.lambda_max);
    let noise_term =
        ctx.zeta.sqrt() * (2.0 * ctx.gamma.sqrt() + eta * (3.0 + 2.0 * lmax + lmin).sqrt());
    let beta = ctx.oracle.beta_norm_bound;
    let signal_term = if beta == 0.0 {
        0.0
    } else {
        let bracket = std::f64::consts::SQRT_2 * (eta / b - 1.0 / c) * ctx.frobenius_sigma_raw
            + 2.0 * eta * b
            + (c - ctx.b_over_eta()) * lmin
            + ctx.eta2 * (lmin + 1.0) * (c * c + b * b).sqrt();
        beta * bracket
    };
    CrossprodSensitivity { noise_term, signal_term }
}

/// l2 sensitivity of the knockoff cross-product `[X' X~']^T y`.
pub fn method1_crossprod_sensitivity(ctx: &SensitivityContext) -> f64 {
    method1_crossprod_terms(ctx).total()
}

/// Smallest `lambda_min` admitted by the estimate-perturbation bound,
/// `eta^2 / (1 - eta^2)` (infinite when `eta^2 >= 1`).
pub fn method2_lambda_floor(eta2: f64) -> f64 {
    if eta2 < 1.0 {
        eta2 / (1.0 - eta2)
    } else {
        f64::INFINITY
    }
}

/// l2 sensitivity of the OLS estimate on the augmented normalized design:
/// `2 zeta^1/2 / sqrt((1 - eta^2) lambda_min - eta^2) + (C_min - B/eta) ||beta||`.
pub fn method2_estimate_sensitivity(ctx: &SensitivityContext) -> Result<f64> {
    method2_estimate_sensitivity_with_ridge(ctx, 0.0)
}

/// As [`method2_estimate_sensitivity`], with `lambda_min` raised by a ridge
/// term `omega^2` added to `G'`.
pub fn method2_estimate_sensitivity_with_ridge(ctx: &SensitivityContext, omega2: f64) -> Result<f64> {
    if !(omega2 >= 0.0) || !omega2.is_finite() {
        return Err(Error::PreconditionViolated(format!("ridge term must be >= 0, got {omega2}")));
    }
    let lmin = ctx.spectrum.lambda_min + omega2;
    let required = method2_lambda_floor(ctx.eta2);
    if !(lmin > required) {
        return Err(Error::PrivacyPreconditionFailed { lambda_min: lmin, required });
    }
    let denom = ((1.0 - ctx.eta2) * lmin - ctx.eta2).sqrt();
    let beta = ctx.oracle.beta_norm_bound;
    let shift = if beta == 0.0 {
        0.0
    } else {
        (ctx.bounds.col_min - ctx.b_over_eta()) * beta
    };
    Ok(2.0 * ctx.zeta.sqrt() / denom + shift)
}

/// `X^T X` recomputed from the raw design, for cross-checks.
pub fn raw_gram(nd: &NormalizedDesign) -> DMatrix<f64> {
    crate::linalg::cross(nd.source().x(), nd.source().x())
}
