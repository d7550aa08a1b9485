//! Kronecker and Khatri-Rao products.

use crate::error::{shape, Result};
use crate::matrix::DenseMatrix;

/// `M ⊗ N`, with `(M⊗N)[p·rows(N) + q, s·cols(N) + t] = M[p,s]·N[q,t]`.
pub fn kronecker(m: &DenseMatrix, n: &DenseMatrix) -> DenseMatrix {
    let (mr, mc) = m.shape();
    let (nr, nc) = n.shape();
    let mut out = DenseMatrix::zeros(mr * nr, mc * nc);
    for p in 0..mr {
        for s in 0..mc {
            let mps = m[(p, s)];
            for q in 0..nr {
                let row = out.row_mut(p * nr + q);
                for t in 0..nc {
                    row[s * nc + t] = mps * n[(q, t)];
                }
            }
        }
    }
    out
}

/// Partition-wise Khatri-Rao product: block `r` of the result is `M_r ⊗ N_r`, blocks
/// concatenated horizontally.
///
/// The block-term model uses it as `B ⊙ C` (blocks `B_r` with the column `c_r`) and
/// `C ⊙ A` (blocks `c_r` with `A_r`).
pub fn khatri_rao_partitioned(m_blocks: &[DenseMatrix], n_blocks: &[DenseMatrix]) -> Result<DenseMatrix> {
    if m_blocks.len() != n_blocks.len() {
        return Err(shape(format!(
            "partitioned Khatri-Rao needs equal block counts, got {} and {}",
            m_blocks.len(),
            n_blocks.len()
        )));
    }
    let rows: Vec<usize> = m_blocks.iter().zip(n_blocks).map(|(m, n)| m.rows() * n.rows()).collect();
    if rows.windows(2).any(|w| w[0] != w[1]) {
        return Err(shape("partitioned Khatri-Rao blocks produce different row counts"));
    }
    let parts: Vec<DenseMatrix> = m_blocks.iter().zip(n_blocks).map(|(m, n)| kronecker(m, n)).collect();
    DenseMatrix::hstack(&parts)
}

/// Column-wise Khatri-Rao product: column `l` is `m_l ⊗ n_l`.
pub fn khatri_rao_columnwise(m: &DenseMatrix, n: &DenseMatrix) -> Result<DenseMatrix> {
    if m.cols() != n.cols() {
        return Err(shape(format!(
            "column-wise Khatri-Rao needs equal column counts, got {} and {}",
            m.cols(),
            n.cols()
        )));
    }
    let nr = n.rows();
    Ok(DenseMatrix::from_fn(m.rows() * nr, m.cols(), |row, l| m[(row / nr, l)] * n[(row % nr, l)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn kronecker_identities() {
        assert_eq!(kronecker(&DenseMatrix::identity(2), &DenseMatrix::identity(3)), DenseMatrix::identity(6));
        let m = mat(2, 3, &[1.0, -2.0, 3.5, 0.0, 4.0, 1.0]);
        assert_eq!(kronecker(&m, &mat(1, 1, &[1.0])), m);
    }

    #[test]
    fn kronecker_hand_expansion() {
        let k = kronecker(&mat(1, 2, &[1.0, 2.0]), &mat(2, 1, &[3.0, 4.0]));
        assert_eq!(k, mat(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    }

    #[test]
    fn partitioned_reduces_to_kronecker() {
        let b = mat(3, 1, &[1.0, 2.0, 3.0]);
        let c = mat(2, 1, &[-1.0, 5.0]);
        let kr = khatri_rao_partitioned(std::slice::from_ref(&b), std::slice::from_ref(&c)).unwrap();
        assert_eq!(kr, kronecker(&b, &c));
        let m = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(khatri_rao_partitioned(std::slice::from_ref(&m), &[mat(1, 1, &[1.0])]).unwrap(), m);
        assert!(khatri_rao_partitioned(std::slice::from_ref(&m), &[]).is_err());
    }

    #[test]
    fn columnwise_matches_sum_of_column_kroneckers() {
        let a = DenseMatrix::from_fn(3, 2, |i, l| (i as f64 + 1.0) * (l as f64 - 0.5));
        let b = DenseMatrix::from_fn(2, 2, |j, l| (j * 3 + l) as f64 - 1.0);
        let kr = khatri_rao_columnwise(&a, &b).unwrap();
        // loop oracle of Σ_l a_l ⊗ b_l
        let mut oracle = vec![0.0; 6];
        for l in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    oracle[i * 2 + j] += a[(i, l)] * b[(j, l)];
                }
            }
        }
        let summed: Vec<f64> = (0..6).map(|r| kr.row(r).iter().sum()).collect();
        for (x, y) in summed.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-14);
        }
        let e1 = mat(2, 1, &[1.0, 0.0]);
        assert_eq!(khatri_rao_columnwise(&e1, &e1).unwrap(), kronecker(&e1, &e1));
        assert!(khatri_rao_columnwise(&a, &DenseMatrix::zeros(2, 3)).is_err());
    }
}
