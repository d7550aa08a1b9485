//! Small dense solvers backed by nalgebra: SPD solves for the regularized normal equations,
//! minimum-norm solves for rank-deficient Gram matrices, and symmetric eigenvalues.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{shape, BtdError, Result};
use crate::matrix::DenseMatrix;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// nalgebra is column-major, so its storage of `Xᵀ` is the row-major storage of `X`.
fn from_na_transposed(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_vec(m.ncols(), m.nrows(), m.as_slice().to_vec())
}

/// Solves `X · G = rhs` for symmetric positive definite `G`, i.e. returns `rhs · G⁻¹`,
/// via a Cholesky factorization. Never forms the inverse.
pub fn solve_spd_right(rhs: &DenseMatrix, gram: &DenseMatrix) -> Result<DenseMatrix> {
    let n = gram.rows();
    if gram.cols() != n || rhs.cols() != n {
        return Err(shape(format!("right SPD solve with {:?} Gram and {:?} rhs", gram.shape(), rhs.shape())));
    }
    let chol =
        Cholesky::new(to_na(gram)).ok_or_else(|| BtdError::NotPositiveDefinite(format!("{n}x{n} Gram matrix")))?;
    // G symmetric: X G = R  <=>  G Xᵀ = Rᵀ
    let mut xt = DMatrix::from_column_slice(n, rhs.rows(), rhs.as_slice());
    chol.solve_mut(&mut xt);
    let x = from_na_transposed(&xt);
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(BtdError::NotPositiveDefinite(format!("{n}x{n} Gram matrix is numerically singular")));
    }
    Ok(x)
}

/// Minimum-norm solution of `X · G = rhs` for symmetric positive semi-definite `G`,
/// using the eigen-decomposition pseudo-inverse. Eigenvalues below
/// `n · ε · λ_max` are treated as zero.
pub fn solve_psd_right_min_norm(rhs: &DenseMatrix, gram: &DenseMatrix) -> Result<DenseMatrix> {
    let n = gram.rows();
    if gram.cols() != n || rhs.cols() != n {
        return Err(shape(format!("right min-norm solve with {:?} Gram and {:?} rhs", gram.shape(), rhs.shape())));
    }
    let eig = SymmetricEigen::new(to_na(gram));
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = (n as f64) * f64::EPSILON * max;
    let q = &eig.eigenvectors;
    // X = R Q Λ⁺ Qᵀ
    let r = to_na(rhs);
    let mut rq = &r * q;
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let inv = if lam > cutoff { 1.0 / lam } else { 0.0 };
        rq.column_mut(c).scale_mut(inv);
    }
    let x = rq * q.transpose();
    Ok(DenseMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]))
}

/// Eigenvalues of a symmetric matrix in ascending order. The input is symmetrized first.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(shape(format!("eigenvalues of a non-square {:?} matrix", m.shape())));
    }
    let a = to_na(m);
    let sym = (&a + a.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}
