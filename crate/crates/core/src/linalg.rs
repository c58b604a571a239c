//! Dense kernels shared by the knockoff construction and the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Diagonal jitter added once when a Cholesky factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// `a^T b`, routed through an explicit transpose so the product hits the
/// blocked gemm kernel.
pub fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// Replaces `m` with `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    (ev[0], ev[ev.len() - 1])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Upper-triangular `C` with `C^T C = s`. Retries once with
/// [`CHOLESKY_JITTER`] on the diagonal.
pub fn cholesky_upper_with_jitter(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = s.clone().cholesky() {
        return Some(ch.l().transpose());
    }
    let jittered = s + DMatrix::identity(s.nrows(), s.ncols()) * CHOLESKY_JITTER;
    jittered.cholesky().map(|ch| ch.l().transpose())
}

/// Orthonormal `n x p` basis orthogonal to the column space of `x` (`n x p`,
/// full column rank, `n >= 2p`).
///
/// Runs a Householder QR of `x`, `Q = H_0 H_1 ... H_{p-1}`, and returns the
/// columns `p..2p` of `Q`. The result is a deterministic function of `x`.
pub fn orthogonal_complement(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n < 2 * p {
        return None;
    }
    let mut w = x.clone();
    let data = w.as_mut_slice();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Householder vectors overwrite the reduced columns in place.
    for k in 0..p {
        let (left, right) = data.split_at_mut((k + 1) * n);
        let v = &mut left[k * n + k..(k + 1) * n];
        let alpha = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(alpha > 1e-13 * scale.max(1.0) * (n as f64).sqrt()) {
            return None;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= vnorm);
        for j in 0..(p - k - 1) {
            let col = &mut right[j * n + k..(j + 1) * n];
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot;
            col.iter_mut().zip(v.iter()).for_each(|(c, a)| *c -= f * a);
        }
    }

    let mut u = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        u[(p + j, j)] = 1.0;
    }
    let us = u.as_mut_slice();
    for k in (0..p).rev() {
        let v = &data[k * n + k..(k + 1) * n];
        for j in 0..p {
            let col = &mut us[j * n + k..(j + 1) * n];
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            if dot != 0.0 {
                let f = 2.0 * dot;
                col.iter_mut().zip(v.iter()).for_each(|(c, a)| *c -= f * a);
            }
        }
    }
    Some(u)
}

/// Solves `a x = b` by LU with partial pivoting. Returns `None` for a singular
/// or numerically unusable system.
pub fn solve_general(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Rewrites a `2p x 2p` system in the basis `u_i = e_i + e_{i+p}`,
/// `v_i = e_i - e_{i+p}`: returns `(T^T A T, T^T c)` with the `u` block first.
///
/// Exchanging `i` and `i + p` in the original system only flips the sign of
/// `v_i` here, and pivoted LU and Cholesky commute exactly with sign flips, so
/// a solve in this basis is exactly equivariant under such exchanges.
pub fn to_pair_basis(a: &DMatrix<f64>, c: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let p = a.nrows() / 2;
    let mut out = DMatrix::zeros(2 * p, 2 * p);
    for j in 0..p {
        for i in 0..p {
            let (w, x, y, z) = (a[(i, j)], a[(i, j + p)], a[(i + p, j)], a[(i + p, j + p)]);
            out[(i, j)] = (w + z) + (x + y);
            out[(i, j + p)] = (w - z) + (y - x);
            out[(i + p, j)] = (w - z) + (x - y);
            out[(i + p, j + p)] = (w + z) - (x + y);
        }
    }
    let mut rhs = DVector::zeros(2 * p);
    for i in 0..p {
        rhs[i] = c[i] + c[i + p];
        rhs[i + p] = c[i] - c[i + p];
    }
    (out, rhs)
}

/// Maps pair-basis coordinates `z` back: `b_i = z_i + z_{i+p}`,
/// `b_{i+p} = z_i - z_{i+p}`.
pub fn from_pair_basis(z: &DVector<f64>) -> DVector<f64> {
    let p = z.len() / 2;
    DVector::from_fn(2 * p, |k, _| if k < p { z[k] + z[k + p] } else { z[k - p] - z[k] })
}

/// Clips the spectrum of a symmetric matrix from below at `floor`.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        for (n, p, seed) in [(10, 5, 1), (40, 7, 2), (200, 30, 3), (8, 1, 4)] {
            let x = gaussian(n, p, seed);
            let u = orthogonal_complement(&x).unwrap();
            let utx = cross(&u, &x);
            assert!(utx.amax() < 1e-12 * x.amax() * n as f64, "U^T X = {}", utx.amax());
            let utu = cross(&u, &u);
            assert!(max_abs_diff(&utu, &DMatrix::identity(p, p)) < 1e-12);
        }
    }

    #[test]
    fn complement_rejects_short_or_rank_deficient() {
        assert!(orthogonal_complement(&gaussian(5, 3, 9)).is_none());
        let mut x = gaussian(10, 3, 9);
        let c0 = x.column(0).clone_owned();
        x.set_column(2, &(c0 * 2.0));
        assert!(orthogonal_complement(&x).is_none());
    }

    #[test]
    fn jittered_cholesky_handles_singular_psd() {
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let s = &v * v.transpose();
        let c = cholesky_upper_with_jitter(&s).unwrap();
        assert!(max_abs_diff(&(c.transpose() * &c), &s) < 1e-8);
        let neg = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(cholesky_upper_with_jitter(&neg).is_none());
    }

    #[test]
    fn clipping_raises_floor() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let c = clip_eigenvalues(&m, 0.5);
        let (lo, hi) = extreme_eigenvalues(&c);
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }
}
