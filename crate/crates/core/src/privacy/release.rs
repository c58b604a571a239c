//! The two private releases.
//!
//! * Perturbed Gram pair: `(G' + E, [X' X~']^T y + e)`, where
//!   `E = θ1 [[0, I], [I, 0]] + [[1, 1], [1, 1]] ⊗ θ2` with a Laplace scalar
//!   `θ1` and a symmetric zero-diagonal Gaussian matrix `θ2`, and `e` is
//!   i.i.d. Gaussian. Any antisymmetric statistic of the pair can be released.
//! * Perturbed estimate: the OLS (optionally ridge) estimate on the augmented
//!   normalized design plus i.i.d. Gaussian noise.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::knockoff::AugmentedDesign;
use crate::linalg;
use crate::privacy::mechanisms::{gaussian_scale, gaussian_vector, laplace_draw, laplace_scale, PrivacyBudget};
use crate::privacy::sensitivity::{
    gram_sensitivities, method1_crossprod_sensitivity, method2_estimate_sensitivity_with_ridge,
    SensitivityContext,
};
use crate::rng;
use crate::selection::SwapSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseKind {
    Method1Pair,
    Method2Estimate,
}

/// Whether a release draws calibrated noise or none at all (testing only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Calibrated,
    Zero,
}

/// Every scale a release used, plus the sensitivities behind them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NoiseScales {
    pub theta1_scale: Option<f64>,
    pub kappa1_sq: Option<f64>,
    pub kappa2_sq: Option<f64>,
    pub kappa_sq: Option<f64>,
    pub lambda_min_sensitivity: Option<f64>,
    pub gram_frob_sensitivity: Option<f64>,
    pub crossprod_sensitivity: Option<f64>,
    pub estimate_sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGramNoise {
    pub theta_1: f64,
    pub theta_2: DMatrix<f64>,
    pub assembled_e: DMatrix<f64>,
}

impl StructuredGramNoise {
    pub fn from_parts(theta_1: f64, theta_2: DMatrix<f64>) -> Result<Self> {
        let p = theta_2.nrows();
        if theta_2.ncols() != p {
            return Err(Error::DimensionMismatch { what: "theta_2 columns", expected: p, found: theta_2.ncols() });
        }
        for i in 0..p {
            if theta_2[(i, i)] != 0.0 {
                return Err(Error::PreconditionViolated("theta_2 must have a zero diagonal".into()));
            }
            for j in 0..i {
                if theta_2[(i, j)] != theta_2[(j, i)] {
                    return Err(Error::PreconditionViolated("theta_2 must be symmetric".into()));
                }
            }
        }
        let mut e = DMatrix::zeros(2 * p, 2 * p);
        for (r, c) in [(0, 0), (0, p), (p, 0), (p, p)] {
            e.view_mut((r, c), (p, p)).copy_from(&theta_2);
        }
        for i in 0..p {
            e[(i, i + p)] += theta_1;
            e[(i + p, i)] += theta_1;
        }
        Ok(Self { theta_1, theta_2, assembled_e: e })
    }

    pub fn zero(p: usize) -> Self {
        Self::from_parts(0.0, DMatrix::zeros(p, p)).expect("zero noise is well formed")
    }

    /// `θ1 ~ Lap(theta1_scale)`, upper triangle of `θ2` i.i.d. `N(0, kappa1_sq)`.
    pub fn sample(p: usize, theta1_scale: f64, kappa1_sq: f64, seed: u64) -> Self {
        let theta_1 = laplace_draw(&mut rng::stream(seed, rng::label::THETA1), theta1_scale);
        let mut r2 = rng::stream(seed, rng::label::THETA2);
        let mut theta_2 = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in (i + 1)..p {
                let v = crate::privacy::mechanisms::gaussian_draw(&mut r2, kappa1_sq);
                theta_2[(i, j)] = v;
                theta_2[(j, i)] = v;
            }
        }
        Self::from_parts(theta_1, theta_2).expect("sampled noise is well formed")
    }
}

/// A frozen noise realization for the perturbed Gram pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Method1Noise {
    pub gram: StructuredGramNoise,
    pub crossprod: DVector<f64>,
}

impl Method1Noise {
    pub fn zero(p: usize) -> Self {
        Self { gram: StructuredGramNoise::zero(p), crossprod: DVector::zeros(2 * p) }
    }

    pub fn sample(p: usize, scales: &NoiseScales, seed: u64) -> Self {
        let gram = StructuredGramNoise::sample(
            p,
            scales.theta1_scale.unwrap_or(0.0),
            scales.kappa1_sq.unwrap_or(0.0),
            seed,
        );
        let crossprod = gaussian_vector(
            &mut rng::stream(seed, rng::label::CROSSPROD_NOISE),
            2 * p,
            scales.kappa2_sq.unwrap_or(0.0),
        );
        Self { gram, crossprod }
    }

    /// The same realization expressed in swapped coordinates, `(P E P, P e)`.
    pub fn swapped(&self, f: &SwapSet) -> Self {
        let mut gram = self.gram.clone();
        gram.assembled_e = f.permute_matrix(&self.gram.assembled_e);
        Self { gram, crossprod: f.permute_vector(&self.crossprod) }
    }
}

#[derive(Debug, Clone)]
pub struct PrivateRelease {
    pub kind: ReleaseKind,
    pub gram_noisy: Option<DMatrix<f64>>,
    pub crossprod_noisy: Option<DVector<f64>>,
    pub estimate_noisy: Option<DVector<f64>>,
    pub budget: PrivacyBudget,
    pub noise_scales: NoiseScales,
}

impl PrivateRelease {
    /// Composed `(eps, delta)` of the release.
    pub fn total_privacy(&self) -> (f64, f64) {
        self.budget.total()
    }
}

fn check_ctx_budget(ctx: &SensitivityContext, budget: &PrivacyBudget, ad: &AugmentedDesign) -> Result<()> {
    if ctx.delta2 != budget.delta2 {
        return Err(Error::PreconditionViolated(format!(
            "sensitivity context built with delta2 = {} but budget has {}",
            ctx.delta2, budget.delta2
        )));
    }
    if ctx.p != ad.p() {
        return Err(Error::DimensionMismatch { what: "sensitivity context p", expected: ad.p(), found: ctx.p });
    }
    Ok(())
}

pub fn method1_scales(ctx: &SensitivityContext, budget: &PrivacyBudget) -> Result<NoiseScales> {
    budget.validate_method1()?;
    let (lam_sens, frob_sens) = gram_sensitivities(ctx);
    let cp_sens = method1_crossprod_sensitivity(ctx);
    Ok(NoiseScales {
        theta1_scale: Some(laplace_scale(lam_sens, budget.eps1)?),
        kappa1_sq: Some(gaussian_scale(frob_sens, budget.eps2, budget.delta)?),
        kappa2_sq: Some(gaussian_scale(cp_sens, budget.eps, budget.delta1)?),
        kappa_sq: None,
        lambda_min_sensitivity: Some(lam_sens),
        gram_frob_sensitivity: Some(frob_sens),
        crossprod_sensitivity: Some(cp_sens),
        estimate_sensitivity: None,
    })
}

/// Releases the perturbed pair `(G' + E, [X' X~']^T y + e)`.
pub fn release_method1(
    ad: &AugmentedDesign,
    y: &DVector<f64>,
    ctx: &SensitivityContext,
    budget: &PrivacyBudget,
    seed: u64,
    mode: NoiseMode,
) -> Result<PrivateRelease> {
    check_ctx_budget(ctx, budget, ad)?;
    let (scales, noise) = match mode {
        NoiseMode::Calibrated => {
            let scales = method1_scales(ctx, budget)?;
            let noise = Method1Noise::sample(ad.p(), &scales, seed);
            (scales, noise)
        }
        NoiseMode::Zero => {
            budget.validate_method1()?;
            (NoiseScales::default(), Method1Noise::zero(ad.p()))
        }
    };
    Ok(release_method1_with_noise(ad, y, budget, scales, &noise))
}

/// Applies a given noise realization; used for frozen-noise comparisons.
pub fn release_method1_with_noise(
    ad: &AugmentedDesign,
    y: &DVector<f64>,
    budget: &PrivacyBudget,
    noise_scales: NoiseScales,
    noise: &Method1Noise,
) -> PrivateRelease {
    let gram_noisy = &ad.gram_g + &noise.gram.assembled_e;
    let crossprod_noisy = ad.crossprod(y) + &noise.crossprod;
    PrivateRelease {
        kind: ReleaseKind::Method1Pair,
        gram_noisy: Some(gram_noisy),
        crossprod_noisy: Some(crossprod_noisy),
        estimate_noisy: None,
        budget: *budget,
        noise_scales,
    }
}

pub fn method2_scales(ctx: &SensitivityContext, budget: &PrivacyBudget, ridge_omega2: f64) -> Result<NoiseScales> {
    budget.validate_method2()?;
    let sens = method2_estimate_sensitivity_with_ridge(ctx, ridge_omega2)?;
    Ok(NoiseScales {
        kappa_sq: Some(gaussian_scale(sens, budget.eps, budget.delta1)?),
        estimate_sensitivity: Some(sens),
        ..NoiseScales::default()
    })
}

/// `(G' + omega^2 I)^{-1} c`, Cholesky first and LU as a fallback. Systems of
/// even size are solved in the original/knockoff pair basis.
pub fn ridge_solve(gram: &DMatrix<f64>, crossprod: &DVector<f64>, omega2: f64) -> Result<DVector<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += omega2;
    }
    if a.nrows() % 2 == 1 {
        return solve_spd_or_general(a, crossprod);
    }
    let (a, c) = linalg::to_pair_basis(&a, crossprod);
    solve_spd_or_general(a, &c).map(|z| linalg::from_pair_basis(&z))
}

fn solve_spd_or_general(a: DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(c);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    linalg::solve_general(&a, c).ok_or(Error::SingularSystem)
}

/// Releases the perturbed OLS/ridge estimate on the augmented design.
pub fn release_method2(
    ad: &AugmentedDesign,
    y: &DVector<f64>,
    ctx: &SensitivityContext,
    budget: &PrivacyBudget,
    ridge_omega2: f64,
    seed: u64,
    mode: NoiseMode,
) -> Result<PrivateRelease> {
    check_ctx_budget(ctx, budget, ad)?;
    let (scales, noise) = match mode {
        NoiseMode::Calibrated => {
            let scales = method2_scales(ctx, budget, ridge_omega2)?;
            let noise = gaussian_vector(
                &mut rng::stream(seed, rng::label::ESTIMATE_NOISE),
                2 * ad.p(),
                scales.kappa_sq.unwrap_or(0.0),
            );
            (scales, noise)
        }
        NoiseMode::Zero => {
            budget.validate_method2()?;
            (NoiseScales::default(), DVector::zeros(2 * ad.p()))
        }
    };
    release_method2_with_noise(ad, y, budget, ridge_omega2, scales, &noise)
}

pub fn release_method2_with_noise(
    ad: &AugmentedDesign,
    y: &DVector<f64>,
    budget: &PrivacyBudget,
    ridge_omega2: f64,
    noise_scales: NoiseScales,
    noise: &DVector<f64>,
) -> Result<PrivateRelease> {
    let estimate = ridge_solve(&ad.gram_g, &ad.crossprod(y), ridge_omega2)?;
    Ok(PrivateRelease {
        kind: ReleaseKind::Method2Estimate,
        gram_noisy: None,
        crossprod_noisy: None,
        estimate_noisy: Some(estimate + noise),
        budget: *budget,
        noise_scales,
    })
}
