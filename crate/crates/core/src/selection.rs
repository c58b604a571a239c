//! Knockoff statistics, the knockoff+ threshold and selection evaluation.
//!
//! Coefficients `b` of length `2p` (originals first, knockoffs second) are
//! turned into one statistic per feature:
//!
//! * LCD: `w_i = |b_i| - |b_{i+p}|`
//! * CSM: `w_i = sgn(|b_i| - |b_{i+p}|) max(|b_i|, |b_{i+p}|)`
//!
//! and the selection is `{j : w_j >= T}` with
//!
//! ```text
//! T = min { t in Ψ : (1 + #{j : w_j <= -t}) / max(#{j : w_j >= t}, 1) <= q },
//! Ψ = { |w_j| } \ {0},
//! ```
//!
//! or `T = +inf` when no candidate qualifies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::ModelOracle;
use crate::error::{Error, Result};
use crate::knockoff::AugmentedDesign;
use crate::linalg;
use crate::privacy::{ridge_solve, PrivateRelease, ReleaseKind};

/// Coordinate descent stops when no coefficient moves more than this.
pub const CD_TOLERANCE: f64 = 1e-8;
/// Sweep cap for coordinate descent.
pub const CD_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Lcd,
    Csm,
}

impl std::str::FromStr for StatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lcd" => Ok(Self::Lcd),
            "csm" => Ok(Self::Csm),
            other => Err(Error::ConfigInvalid(format!("unknown statistic {other:?}"))),
        }
    }
}

impl std::fmt::Display for StatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lcd => "lcd",
            Self::Csm => "csm",
        })
    }
}

/// How coefficients are computed from a Gram matrix and a cross-product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    /// Solves `(A + ridge I) b = c`.
    Ols { ridge: f64 },
    /// Minimizes `b^T (A + ridge I) b - 2 c^T b + lambda ||b||_1`.
    Lasso { lambda: f64, ridge: f64 },
}

#[derive(Debug, Clone)]
pub enum EstimateKind {
    NonprivateOls,
    NonprivateLasso { lambda: f64 },
    /// Statistics computed from the perturbed Gram pair. `lambda > 0` runs the
    /// Lasso on the noisy pair, which may be non-convex. `clip_floor` repairs
    /// an indefinite noisy Gram by clipping its spectrum.
    Method1 {
        release: PrivateRelease,
        lambda: Option<f64>,
        clip_floor: Option<f64>,
    },
    /// Statistics computed from the perturbed estimate.
    Method2 { release: PrivateRelease },
}

#[derive(Debug, Clone)]
pub struct EstimateSource {
    pub kind: EstimateKind,
    pub ridge_omega2: f64,
}

impl EstimateSource {
    pub fn new(kind: EstimateKind, ridge_omega2: f64) -> Result<Self> {
        if !(ridge_omega2 >= 0.0) || !ridge_omega2.is_finite() {
            return Err(Error::PreconditionViolated(format!("ridge must be >= 0, got {ridge_omega2}")));
        }
        match &kind {
            EstimateKind::NonprivateLasso { lambda } | EstimateKind::Method1 { lambda: Some(lambda), .. }
                if !(*lambda >= 0.0) =>
            {
                return Err(Error::PreconditionViolated(format!("lambda must be >= 0, got {lambda}")))
            }
            EstimateKind::Method1 { release, .. } if release.kind != ReleaseKind::Method1Pair => {
                return Err(Error::PreconditionViolated("Method1 source needs a Gram-pair release".into()))
            }
            EstimateKind::Method2 { release } if release.kind != ReleaseKind::Method2Estimate => {
                return Err(Error::PreconditionViolated("Method2 source needs an estimate release".into()))
            }
            _ => {}
        }
        Ok(Self { kind, ridge_omega2 })
    }

    /// Coefficients for this source. The design and response are only read
    /// by the non-private kinds.
    pub fn coefficients(&self, ad: &AugmentedDesign, y: &DVector<f64>) -> Result<DVector<f64>> {
        let ridge = self.ridge_omega2;
        match &self.kind {
            EstimateKind::NonprivateOls => {
                estimate_coefficients(&ad.gram_g, &ad.crossprod(y), Solver::Ols { ridge })
            }
            EstimateKind::NonprivateLasso { lambda } => {
                estimate_coefficients(&ad.gram_g, &ad.crossprod(y), Solver::Lasso { lambda: *lambda, ridge })
            }
            EstimateKind::Method1 { release, lambda, clip_floor } => {
                let gram = release.gram_noisy.as_ref().expect("pair release carries a Gram");
                let cp = release.crossprod_noisy.as_ref().expect("pair release carries a cross-product");
                let repaired;
                let gram = match clip_floor {
                    Some(floor) => {
                        repaired = linalg::clip_eigenvalues(gram, *floor);
                        &repaired
                    }
                    None => gram,
                };
                let solver = match lambda {
                    Some(l) if *l > 0.0 => Solver::Lasso { lambda: *l, ridge },
                    _ => Solver::Ols { ridge },
                };
                estimate_coefficients(gram, cp, solver)
            }
            EstimateKind::Method2 { release } => {
                Ok(release.estimate_noisy.clone().expect("estimate release carries an estimate"))
            }
        }
    }
}

pub fn estimate_coefficients(gram: &DMatrix<f64>, crossprod: &DVector<f64>, solver: Solver) -> Result<DVector<f64>> {
    if gram.nrows() != crossprod.len() || !gram.is_square() {
        return Err(Error::DimensionMismatch {
            what: "Gram size vs cross-product length",
            expected: gram.nrows(),
            found: crossprod.len(),
        });
    }
    match solver {
        Solver::Ols { ridge } => ridge_solve(gram, crossprod, ridge),
        Solver::Lasso { lambda, ridge } => {
            if !(lambda >= 0.0) {
                return Err(Error::PreconditionViolated(format!("lambda must be >= 0, got {lambda}")));
            }
            let mut a = gram.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += ridge;
            }
            lasso_gram(&a, crossprod, lambda)
        }
    }
}

/// `b^T A b - 2 c^T b + lambda ||b||_1`.
pub fn lasso_objective(a: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, b: &DVector<f64>) -> f64 {
    (b.transpose() * a * b)[(0, 0)] - 2.0 * c.dot(b) + lambda * b.lp_norm(1)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the Gram form of the Lasso, from zero,
/// followed by an exact solve on the detected active set when that solve
/// satisfies the optimality conditions.
pub fn lasso_gram(a: &DMatrix<f64>, c: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = a.nrows();
    if (0..d).any(|j| !(a[(j, j)] > 0.0)) {
        return Err(Error::NonConvergence { sweeps: 0 });
    }
    let half = 0.5 * lambda;
    let mut b = DVector::<f64>::zeros(d);
    let mut ab = DVector::<f64>::zeros(d);
    for sweep in 1..=CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let ajj = a[(j, j)];
            let rho = c[j] - (ab[j] - ajj * b[j]);
            let next = soft_threshold(rho, half) / ajj;
            let delta = next - b[j];
            if delta != 0.0 {
                ab.axpy(delta, &a.column(j), 1.0);
                b[j] = next;
                max_change = max_change.max(delta.abs());
            }
        }
        if !max_change.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence { sweeps: sweep });
        }
        if max_change <= CD_TOLERANCE {
            return Ok(polish_active_set(a, c, lambda, b));
        }
    }
    Err(Error::NonConvergence { sweeps: CD_MAX_SWEEPS })
}

fn polish_active_set(a: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, b: DVector<f64>) -> DVector<f64> {
    let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
    if active.is_empty() {
        return b;
    }
    let half = 0.5 * lambda;
    let m = active.len();
    let sub = DMatrix::from_fn(m, m, |r, s| a[(active[r], active[s])]);
    let rhs = DVector::from_fn(m, |r, _| c[active[r]] - half * b[active[r]].signum());
    let Some(sol) = linalg::solve_general(&sub, &rhs) else {
        return b;
    };
    let mut polished = DVector::zeros(b.len());
    for (r, &j) in active.iter().enumerate() {
        if sol[r].signum() != b[j].signum() {
            return b;
        }
        polished[j] = sol[r];
    }
    let grad = a * &polished;
    let scale = c.amax().max(1.0);
    let ok = (0..b.len())
        .filter(|j| polished[*j] == 0.0)
        .all(|j| (c[j] - grad[j]).abs() <= half + 1e-9 * scale);
    if ok {
        polished
    } else {
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticVector {
    pub w: Vec<f64>,
    pub statistic_kind: StatKind,
    /// The length-`2p` coefficients that produced `w`.
    pub estimate: Vec<f64>,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn compute_statistics(estimate: &DVector<f64>, kind: StatKind) -> Result<StatisticVector> {
    if estimate.len() % 2 != 0 || estimate.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "estimate length must be 2p",
            expected: estimate.len() + estimate.len() % 2,
            found: estimate.len(),
        });
    }
    let p = estimate.len() / 2;
    let w = (0..p)
        .map(|i| {
            let (orig, ko) = (estimate[i].abs(), estimate[i + p].abs());
            match kind {
                StatKind::Lcd => orig - ko,
                StatKind::Csm => sgn(orig - ko) * orig.max(ko),
            }
        })
        .collect();
    Ok(StatisticVector {
        w,
        statistic_kind: kind,
        estimate: estimate.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    /// Zero-based indices of the selected features, ascending.
    pub selected: Vec<usize>,
    /// `+inf` when nothing qualifies.
    pub threshold: f64,
    pub q: f64,
    pub w: StatisticVector,
}

/// The knockoff+ threshold at target level `q` and the resulting selection.
pub fn knockoff_threshold(w: StatisticVector, q: f64) -> SelectionReport {
    assert!(q > 0.0 && q < 1.0, "target FDR must lie in (0, 1), got {q}");
    let mut candidates: Vec<f64> = w.w.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let threshold = candidates
        .into_iter()
        .find(|&t| {
            let neg = w.w.iter().filter(|&&v| v <= -t).count();
            let pos = w.w.iter().filter(|&&v| v >= t).count();
            (1 + neg) as f64 / pos.max(1) as f64 <= q
        })
        .unwrap_or(f64::INFINITY);
    let selected = w
        .w
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(j, _)| j)
        .collect();
    SelectionReport { selected, threshold, q, w }
}

/// Features whose original and knockoff columns are exchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapSet {
    indices: Vec<usize>,
    p: usize,
}

impl SwapSet {
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::PreconditionViolated("swap set has duplicates".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::PreconditionViolated(format!("swap index {bad} out of range for p = {p}")));
        }
        Ok(Self { indices, p })
    }

    pub fn all(p: usize) -> Self {
        Self { indices: (0..p).collect(), p }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Image of coordinate `k` (in `0..2p`) under the swap.
    fn map(&self, k: usize) -> usize {
        let base = k % self.p;
        if !self.contains(base) {
            k
        } else if k < self.p {
            k + self.p
        } else {
            k - self.p
        }
    }

    /// `P v`.
    pub fn permute_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |k, _| v[self.map(k)])
    }

    /// `P M P`.
    pub fn permute_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(self.map(r), self.map(c))])
    }
}

/// Exchanges original and knockoff columns for every index in `f`.
pub fn swap_columns_test(ad: &AugmentedDesign, f: &SwapSet) -> AugmentedDesign {
    let mut x = ad.design.x_prime().clone();
    let mut k = ad.knockoff.clone();
    for &i in f.indices() {
        let orig = x.column(i).clone_owned();
        x.set_column(i, &k.column(i));
        k.set_column(i, &orig);
    }
    AugmentedDesign {
        design: ad.design.with_x_prime(x),
        knockoff: k,
        s_value: ad.s_value,
        gram_g: f.permute_matrix(&ad.gram_g),
        spectrum: ad.spectrum.clone(),
    }
}

/// Realized false discovery proportion and power of one selection.
pub fn evaluate_selection(report: &SelectionReport, truth: &ModelOracle) -> Result<(f64, f64)> {
    let support = truth.true_support.as_ref().ok_or(Error::MissingTruth)?;
    let hits = report.selected.iter().filter(|j| support.contains(j)).count();
    let false_hits = report.selected.len() - hits;
    let fdp = false_hits as f64 / report.selected.len().max(1) as f64;
    let power = if support.is_empty() {
        0.0
    } else {
        hits as f64 / support.len() as f64
    };
    Ok((fdp, power))
}
