//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative cutoff below which singular values are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// On failure returns the first non-positive (or non-finite) pivot, so callers
/// can report how far from definiteness the matrix was.
pub fn cholesky_lower<T: Scalar>(a: &DMatrix<T>) -> std::result::Result<DMatrix<T>, f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky of a non-square matrix");
    let mut l = a.clone();
    for j in 0..n {
        // column j := a[:, j] - sum_{k<j} l[j, k] * l[:, k]   (rows j..n)
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk == T::zero() {
                continue;
            }
            let (left, mut right) = l.columns_range_pair_mut(k, j);
            let src = left.rows_range(j..n);
            let mut dst = right.rows_range_mut(j..n);
            dst.axpy(-ljk, &src, T::one());
        }
        let pivot = l[(j, j)];
        if !(pivot > T::zero()) || !pivot.is_finite_value() {
            return Err(pivot.as_f64());
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        let inv = T::one() / root;
        for i in (j + 1)..n {
            l[(i, j)] *= inv;
        }
    }
    for j in 1..n {
        for i in 0..j {
            l[(i, j)] = T::zero();
        }
    }
    Ok(l)
}

pub fn cholesky_or_singular<T: Scalar>(a: &DMatrix<T>, context: &str) -> Result<DMatrix<T>> {
    cholesky_lower(a).map_err(|pivot| Error::Singular {
        pivot,
        context: context.to_string(),
    })
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a nonzero diagonal")
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor has a nonzero diagonal")
}

/// Solves `(L Lᵀ) x = b` given the Cholesky factor.
pub fn cholesky_solve<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Minimum-norm least-squares solution of `x β ≈ y` via the SVD.
///
/// Singular values below `RANK_TOLERANCE · σ_max` are treated as zero, which
/// makes the result the pseudoinverse solution for rank-deficient and wide
/// designs alike.
pub fn min_norm_lstsq<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>) -> DVector<T> {
    let d = x.ncols();
    if x.nrows() == 0 || d == 0 {
        return DVector::zeros(d);
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let sigma_max = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |acc, s| acc.max(s));
    let cutoff = sigma_max * T::of(RANK_TOLERANCE);
    let uty = u.transpose() * y;
    let mut coeffs = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > T::zero() {
            coeffs[k] = uty[k] / s;
        }
    }
    v_t.transpose() * coeffs
}

/// `Xᵀ diag(w) X` for non-negative weights.
pub fn weighted_gram<T: Scalar>(x: &DMatrix<T>, w: &DVector<T>) -> DMatrix<T> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    xw.transpose() * &xw
}
