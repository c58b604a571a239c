//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls into the library's numerical code; inputs are
//! recomputed from raw data with plain loops and nalgebra's eigensolver.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n x p` design with a shared factor of strength `rho` on every column.
pub fn factor_design(rng: &mut ChaCha8Rng, n: usize, p: usize, rho: f64) -> DMatrix<f64> {
    let f: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let w = (1.0 - rho).sqrt();
    let r = rho.sqrt();
    DMatrix::from_fn(n, p, |i, _| w * rng.sample::<f64, _>(StandardNormal) + r * f[i])
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `A^T B` by explicit triple loop.
pub fn naive_cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for r in 0..a.nrows() {
                s += a[(r, i)] * b[(r, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

pub fn unit_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let norm = x.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..x.nrows() {
            out[(i, j)] /= norm;
        }
    }
    out
}

pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    (e.min(), e.max())
}

/// `[[S, S - sI], [S - sI, S]]`.
pub fn block_target(sigma: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let p = sigma.nrows();
    DMatrix::from_fn(2 * p, 2 * p, |i, j| {
        let v = sigma[(i % p, j % p)];
        if (i < p) != (j < p) && i % p == j % p {
            v - s
        } else {
            v
        }
    })
}

/// Scalars entering the sensitivity bounds, recomputed from the raw design.
#[derive(Debug, Clone, Copy)]
pub struct RawInputs {
    pub p: usize,
    pub b: f64,
    pub c: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub frob_sigma_prime: f64,
    pub frob_sigma_raw: f64,
    pub beta_norm: f64,
    pub sigma2: f64,
    pub delta2: f64,
}

impl RawInputs {
    pub fn from_design(x: &DMatrix<f64>, beta_norm: f64, sigma2: f64, delta2: f64) -> Self {
        let (n, p) = x.shape();
        let b = (0..n)
            .map(|i| (0..p).map(|j| x[(i, j)].powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let c = (0..p)
            .map(|j| (0..n).map(|i| x[(i, j)].powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let raw = naive_cross(x, x);
        let sp = naive_cross(&unit_columns(x), &unit_columns(x));
        let (lambda_min, lambda_max) = eigen_range(&sp);
        Self {
            p,
            b,
            c,
            lambda_min,
            lambda_max,
            frob_sigma_prime: sp.iter().map(|v| v * v).sum::<f64>().sqrt(),
            frob_sigma_raw: raw.iter().map(|v| v * v).sum::<f64>().sqrt(),
            beta_norm,
            sigma2,
            delta2,
        }
    }

    pub fn eta2(&self) -> f64 {
        self.b * self.b / (self.c * self.c - self.b * self.b)
    }

    pub fn zeta(&self) -> f64 {
        let p = self.p as f64;
        2.0 * p * self.sigma2 / (1.0 - ((2.0 / p) * (2.0 / self.delta2).ln()).sqrt())
    }

    /// Cross-product sensitivity, summed term by term.
    pub fn method1(&self) -> f64 {
        let eta = self.eta2().sqrt();
        let gamma = 2.0 * self.lambda_max - self.lambda_min;
        let t1 = self.zeta().sqrt() * 2.0 * gamma.sqrt();
        let t2 = self.zeta().sqrt() * eta * (3.0 + 2.0 * self.lambda_max + self.lambda_min).sqrt();
        let s1 = 2f64.sqrt() * (eta / self.b - 1.0 / self.c) * self.frob_sigma_raw;
        let s2 = 2.0 * eta * self.b;
        let s3 = (self.c - (self.c * self.c - self.b * self.b).sqrt()) * self.lambda_min;
        let s4 = self.eta2() * (self.lambda_min + 1.0) * (self.c * self.c + self.b * self.b).sqrt();
        t1 + t2 + self.beta_norm * (s1 + s2 + s3 + s4)
    }

    /// Estimate sensitivity, or `None` when the eigenvalue condition fails.
    pub fn method2(&self) -> Option<f64> {
        let e2 = self.eta2();
        if self.lambda_min <= e2 / (1.0 - e2) {
            return None;
        }
        let root = ((1.0 - e2) * self.lambda_min - e2).sqrt();
        let shift = self.c - (self.c * self.c - self.b * self.b).sqrt();
        Some(2.0 * self.zeta().sqrt() / root + shift * self.beta_norm)
    }
}

/// `b^T A b - 2 c^T b + lambda ||b||_1` for `p = 2`.
pub fn lasso_objective2(a: &DMatrix<f64>, c: &[f64; 2], lambda: f64, b: [f64; 2]) -> f64 {
    let quad = a[(0, 0)] * b[0] * b[0] + 2.0 * a[(0, 1)] * b[0] * b[1] + a[(1, 1)] * b[1] * b[1];
    quad - 2.0 * (c[0] * b[0] + c[1] * b[1]) + lambda * (b[0].abs() + b[1].abs())
}

/// Brute-force minimizer on a square grid, zooming around the best cell.
pub fn grid_lasso2(a: &DMatrix<f64>, c: &[f64; 2], lambda: f64, radius: f64) -> ([f64; 2], f64) {
    let steps = 200;
    let mut center = [0.0, 0.0];
    let mut half = radius;
    let mut best = (center, lasso_objective2(a, c, lambda, center));
    for _ in 0..30 {
        let h = 2.0 * half / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps {
                let b = [center[0] - half + i as f64 * h, center[1] - half + j as f64 * h];
                let f = lasso_objective2(a, c, lambda, b);
                if f < best.1 {
                    best = (b, f);
                }
            }
        }
        center = best.0;
        half = 4.0 * h;
    }
    best
}

/// Two-sided exact binomial(1/2) p-value: twice the smaller tail, capped at 1.
pub fn binomial_half_two_sided(successes: u64, trials: u64) -> f64 {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let d = Binomial::new(0.5, trials).expect("valid binomial");
    let lower = d.cdf(successes);
    let upper = if successes == 0 { 1.0 } else { d.sf(successes - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}
