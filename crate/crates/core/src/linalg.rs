//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{IrsError, Result};

/// Solves `a * x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| IrsError::Numerical("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| IrsError::Numerical("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Singular-value cutoff below which a value is treated as zero.
pub fn rank_cutoff(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    sigma_max * rows.max(cols) as f64 * f64::EPSILON
}

/// Moore-Penrose inverse via SVD with cutoff `σ_max·max(r,c)·ε`.
/// Returns the pseudo-inverse and the effective rank.
pub fn pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (r, c) = a.shape();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| IrsError::Numerical("SVD failed".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| IrsError::Numerical("SVD failed".into()))?;
    let sigma_max = svd.singular_values.max();
    let cut = rank_cutoff(sigma_max, r, c);
    let mut rank = 0;
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    Ok((out, rank))
}

/// Pseudo-inverse of a symmetric matrix via its eigendecomposition, with the
/// same relative cutoff as [`pinv`] applied to `|eigenvalue|`.
pub fn symmetric_pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = rank_cutoff(max_abs, n, n);
    let mut rank = 0;
    let mut out = DMatrix::zeros(n, n);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() > cut && ev != 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v / ev) * v.transpose();
        }
    }
    symmetrize(&mut out);
    (out, rank)
}

/// Replaces `a` with `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute norm when `b` is zero.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

pub fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
/// Evaluated as explicit differences so results are reproducible bit for bit.
pub fn pairwise_sq_dists(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "row length mismatch");
    let at = a.transpose();
    let bt = b.transpose();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        sq_euclidean(at.column(i).as_slice(), bt.column(j).as_slice())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (p, rank) = pinv(&a).unwrap();
        assert_eq!(rank, 1);
        // pinv(11ᵀ) = 11ᵀ / 9
        assert_relative_eq!(p, DMatrix::from_element(3, 3, 1.0 / 9.0), epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pinv_matches_svd_pinv() {
        let x = DMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64 * 0.5 - 1.0);
        let a = &x * x.transpose();
        let (p1, r1) = pinv(&a).unwrap();
        let (p2, r2) = symmetric_pinv(&a);
        assert_eq!(r1, 2);
        assert_eq!(r2, 2);
        assert_relative_eq!(p1, p2, epsilon = 1e-10);
    }

    #[test]
    fn spd_solve_diagonal() {
        let a = DMatrix::from_diagonal_element(2, 2, 1.1);
        let x = spd_solve(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0 / 1.1, epsilon = 1e-15);
        assert!(spd_solve(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2)).is_err());
    }
}
