//! Fixed-X knockoff construction.
//!
//! Given a normalized design `X'` with Gram matrix `Σ' = X'^T X'` and a scalar
//! `s`, the knockoff copy
//!
//! ```text
//! X~' = X' (I - s Σ'^{-1}) + U~ C,     C^T C = 2 s I - s^2 Σ'^{-1}
//! ```
//!
//! satisfies `X~'^T X~' = Σ'` and `X'^T X~' = Σ' - s I`, so the augmented Gram
//! matrix is
//!
//! ```text
//! G' = [ Σ'        Σ' - s I ]
//!      [ Σ' - s I  Σ'       ]
//! ```
//!
//! `U~` is an orthonormal `n x p` matrix with `U~^T X' = 0`; it is taken from a
//! Householder QR of `X'` and depends on nothing but `X'`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::NormalizedDesign;
use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for the "s equals lambda_min" hypothesis of the eigenvalue lemma.
pub const LEMMA_S_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GramSpectrum {
    pub sigma_prime: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub frobenius_norm: f64,
}

impl GramSpectrum {
    pub fn from_design(nd: &NormalizedDesign) -> Result<Self> {
        let mut sigma = linalg::cross(nd.x_prime(), nd.x_prime());
        linalg::symmetrize(&mut sigma);
        Self::from_gram(sigma)
    }

    /// Spectral summary of an already-formed normalized Gram matrix.
    pub fn from_gram(sigma_prime: DMatrix<f64>) -> Result<Self> {
        let (lambda_min, lambda_max) = linalg::extreme_eigenvalues(&sigma_prime);
        if !(lambda_min > 0.0) {
            return Err(Error::InvalidDesign(format!(
                "normalized Gram matrix is not invertible (lambda_min = {lambda_min:e})"
            )));
        }
        let frobenius_norm = sigma_prime.norm();
        Ok(Self {
            sigma_prime,
            lambda_min,
            lambda_max,
            frobenius_norm,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma_prime.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SChoice {
    /// `s = lambda_min(Σ')`: keeps `lambda_min(G') = lambda_min(Σ')`.
    PrivateRecommended,
    /// `s = min(2 lambda_min(Σ'), 1)`.
    Classic,
}

pub fn choose_s(spectrum: &GramSpectrum, mode: SChoice) -> f64 {
    match mode {
        SChoice::PrivateRecommended => spectrum.lambda_min,
        SChoice::Classic => (2.0 * spectrum.lambda_min).min(1.0),
    }
}

/// Block Gram matrix `[[Σ, Σ - sI], [Σ - sI, Σ]]`.
pub fn target_gram(sigma: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let p = sigma.nrows();
    let mut off = sigma.clone();
    for i in 0..p {
        off[(i, i)] -= s;
    }
    let mut g = DMatrix::zeros(2 * p, 2 * p);
    g.view_mut((0, 0), (p, p)).copy_from(sigma);
    g.view_mut((p, p), (p, p)).copy_from(sigma);
    g.view_mut((0, p), (p, p)).copy_from(&off);
    g.view_mut((p, 0), (p, p)).copy_from(&off);
    g
}

#[derive(Debug, Clone)]
pub struct AugmentedDesign {
    pub design: NormalizedDesign,
    pub knockoff: DMatrix<f64>,
    pub s_value: f64,
    pub gram_g: DMatrix<f64>,
    pub spectrum: GramSpectrum,
}

impl AugmentedDesign {
    pub fn p(&self) -> usize {
        self.knockoff.ncols()
    }

    /// `[X' X~']` as one `n x 2p` matrix.
    pub fn augmented_matrix(&self) -> DMatrix<f64> {
        let (n, p) = self.knockoff.shape();
        let mut a = DMatrix::zeros(n, 2 * p);
        a.view_mut((0, 0), (n, p)).copy_from(self.design.x_prime());
        a.view_mut((0, p), (n, p)).copy_from(&self.knockoff);
        a
    }

    /// `[X' X~']^T y`.
    pub fn crossprod(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let top = self.design.x_prime().tr_mul(y);
        let bottom = self.knockoff.tr_mul(y);
        let mut out = DVector::zeros(2 * p);
        out.rows_mut(0, p).copy_from(&top);
        out.rows_mut(p, p).copy_from(&bottom);
        out
    }

    /// Smallest eigenvalue of `G'` computed directly.
    pub fn gram_min_eigenvalue(&self) -> f64 {
        linalg::extreme_eigenvalues(&self.gram_g).0
    }
}

pub fn build_knockoffs(nd: NormalizedDesign, s: f64) -> Result<AugmentedDesign> {
    let spectrum = GramSpectrum::from_design(&nd)?;
    build_knockoffs_from(nd, spectrum, s)
}

/// As [`build_knockoffs`], reusing a spectrum already computed from `nd`.
pub fn build_knockoffs_from(nd: NormalizedDesign, spectrum: GramSpectrum, s: f64) -> Result<AugmentedDesign> {
    let (n, p) = (nd.n(), nd.p());
    if spectrum.p() != p {
        return Err(Error::DimensionMismatch { what: "spectrum dimension vs p", expected: p, found: spectrum.p() });
    }
    if n < 2 * p {
        return Err(Error::KnockoffInfeasible(format!("n = {n} < 2p = {}", 2 * p)));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::KnockoffInfeasible(format!("s must be finite and >= 0, got {s}")));
    }
    let sigma = &spectrum.sigma_prime;

    let knockoff = if s == 0.0 {
        nd.x_prime().clone()
    } else {
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::KnockoffInfeasible("normalized Gram matrix is not positive definite".into())
        })?;
        // s Σ'^{-1}, via the Cholesky solve
        let mut s_sigma_inv = chol.solve(&(DMatrix::identity(p, p) * s));
        linalg::symmetrize(&mut s_sigma_inv);

        let mut schur = -(&s_sigma_inv * s);
        for i in 0..p {
            schur[(i, i)] += 2.0 * s;
        }
        linalg::symmetrize(&mut schur);
        let c = linalg::cholesky_upper_with_jitter(&schur).ok_or_else(|| {
            Error::KnockoffInfeasible(format!(
                "Schur complement 2sI - s^2 Σ'^-1 is not positive semidefinite (s = {s})"
            ))
        })?;

        let u = linalg::orthogonal_complement(nd.x_prime()).ok_or_else(|| {
            Error::KnockoffInfeasible("design is rank deficient".into())
        })?;

        let shrink = DMatrix::identity(p, p) - s_sigma_inv;
        nd.x_prime() * shrink + u * c
    };

    let cross = linalg::cross(nd.x_prime(), &knockoff);
    let mut kk = linalg::cross(&knockoff, &knockoff);
    linalg::symmetrize(&mut kk);
    let mut gram_g = DMatrix::zeros(2 * p, 2 * p);
    gram_g.view_mut((0, 0), (p, p)).copy_from(sigma);
    gram_g.view_mut((0, p), (p, p)).copy_from(&cross);
    gram_g.view_mut((p, 0), (p, p)).copy_from(&cross.transpose());
    gram_g.view_mut((p, p), (p, p)).copy_from(&kk);
    linalg::symmetrize(&mut gram_g);

    Ok(AugmentedDesign {
        design: nd,
        knockoff,
        s_value: s,
        gram_g,
        spectrum,
    })
}

/// Extreme eigenvalues of `G'` when `s = lambda_min(Σ')`:
/// `(2 lambda_max - lambda_min, lambda_min)`.
pub fn lemma_eigenvalues(spectrum: &GramSpectrum, s: f64) -> Result<(f64, f64)> {
    if (s - spectrum.lambda_min).abs() > LEMMA_S_TOLERANCE {
        return Err(Error::PreconditionViolated(format!(
            "eigenvalue identity needs s = lambda_min = {}, got s = {s}",
            spectrum.lambda_min
        )));
    }
    Ok((
        2.0 * spectrum.lambda_max - spectrum.lambda_min,
        spectrum.lambda_min,
    ))
}

/// `lambda_min(G)` for the classic choice `s = 2 lambda_min <= 1`, which is
/// exactly zero. Returns `None` when `2 lambda_min > 1` (the classic rule then
/// caps `s` at 1 and the identity does not apply).
pub fn classic_lambda_min_g(spectrum: &GramSpectrum) -> Option<f64> {
    (2.0 * spectrum.lambda_min <= 1.0).then_some(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{normalize_columns, Dataset};
    use crate::linalg::{max_abs_diff, sym_eigenvalues};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn design(n: usize, p: usize, seed: u64) -> NormalizedDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        normalize_columns(Dataset::new(x, DVector::zeros(n)).unwrap()).unwrap()
    }

    fn spectrum_of(sigma: DMatrix<f64>) -> GramSpectrum {
        GramSpectrum::from_gram(sigma).unwrap()
    }

    #[test]
    fn choose_s_examples() {
        let id = spectrum_of(DMatrix::identity(3, 3));
        assert_eq!(choose_s(&id, SChoice::PrivateRecommended), 1.0);
        let mut sp = id.clone();
        sp.lambda_min = 0.3;
        assert!((choose_s(&sp, SChoice::Classic) - 0.6).abs() < 1e-15);
        sp.lambda_min = 0.7;
        assert_eq!(choose_s(&sp, SChoice::Classic), 1.0);
    }

    #[test]
    fn orthogonal_design_gives_orthogonal_knockoffs() {
        // columns e_0, e_1, e_2 in R^8
        let mut x = DMatrix::zeros(8, 3);
        for j in 0..3 {
            x[(j, j)] = 1.0;
        }
        let nd = normalize_columns(Dataset::new(x, DVector::zeros(8)).unwrap()).unwrap();
        let ad = build_knockoffs(nd, 1.0).unwrap();
        let xt = cross_check(&ad);
        assert!(max_abs_diff(&xt, &DMatrix::zeros(3, 3)) < 1e-12);
        let kk = linalg::cross(&ad.knockoff, &ad.knockoff);
        assert!(max_abs_diff(&kk, &DMatrix::identity(3, 3)) < 1e-12);
    }

    fn cross_check(ad: &AugmentedDesign) -> DMatrix<f64> {
        linalg::cross(ad.design.x_prime(), &ad.knockoff)
    }

    #[test]
    fn zero_s_copies_design() {
        let nd = design(30, 4, 7);
        let xp = nd.x_prime().clone();
        let ad = build_knockoffs(nd, 0.0).unwrap();
        assert_eq!(ad.knockoff, xp);
    }

    #[test]
    fn gram_identity_random_design() {
        let nd = design(100, 5, 11);
        let s = GramSpectrum::from_design(&nd).unwrap().lambda_min;
        let ad = build_knockoffs(nd, s).unwrap();
        let a = ad.augmented_matrix();
        let explicit = linalg::cross(&a, &a);
        let target = target_gram(&ad.spectrum.sigma_prime, s);
        assert!(max_abs_diff(&explicit, &target) < 1e-8);
        assert!(max_abs_diff(&ad.gram_g, &target) < 1e-8);
        assert!(ad.gram_min_eigenvalue() > -1e-8);
    }

    #[test]
    fn knockoffs_deterministic() {
        let a = build_knockoffs(design(60, 6, 3), 0.2).unwrap();
        let b = build_knockoffs(design(60, 6, 3), 0.2).unwrap();
        assert_eq!(a.knockoff, b.knockoff);
    }

    #[test]
    fn infeasible_s_rejected() {
        let nd = design(60, 6, 3);
        let lmin = GramSpectrum::from_design(&nd).unwrap().lambda_min;
        // s far above 2 lambda_min makes the Schur complement indefinite
        assert!(matches!(
            build_knockoffs(nd, 4.0 * lmin + 0.5),
            Err(Error::KnockoffInfeasible(_))
        ));
    }

    #[test]
    fn lemma_examples() {
        let id = spectrum_of(DMatrix::identity(3, 3));
        assert_eq!(lemma_eigenvalues(&id, 1.0).unwrap(), (1.0, 1.0));
        assert!(matches!(
            lemma_eigenvalues(&id, 0.5),
            Err(Error::PreconditionViolated(_))
        ));

        // Σ = diag(0.5, 2) -> (3.5, 0.5), cross-checked on the explicit G
        let sp = spectrum_of(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])));
        let (hi, lo) = lemma_eigenvalues(&sp, 0.5).unwrap();
        assert!((hi - 3.5).abs() < 1e-12 && (lo - 0.5).abs() < 1e-12);
        let ev = sym_eigenvalues(&target_gram(&sp.sigma_prime, 0.5));
        assert!((ev[0] - 0.5).abs() < 1e-12 && (ev[3] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn classic_choice_singular_g() {
        let sp = spectrum_of(DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]));
        assert_eq!(classic_lambda_min_g(&sp), Some(0.0));
        let s = choose_s(&sp, SChoice::Classic);
        let ev = sym_eigenvalues(&target_gram(&sp.sigma_prime, s));
        assert!(ev[0].abs() < 1e-12);
    }
}
