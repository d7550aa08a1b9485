//! Dense third-order tensors and their mode unfoldings.
//!
//! Element `(i, j, k)` of an `I×J×K` tensor lives at linear offset `(i·J + j)·K + k`.
//! Unfoldings follow the column orderings that make the block-term identities
//!
//! ```text
//! X_(1)ᵀ = (B ⊙ C) Aᵀ,   X_(2)ᵀ = (C ⊙ A) Bᵀ,   X_(3)ᵀ = S Cᵀ
//! ```
//!
//! hold exactly:
//!
//! | mode | shape       | column index |
//! |------|-------------|--------------|
//! | 1    | `I × (J·K)` | `j·K + k`    |
//! | 2    | `J × (K·I)` | `k·I + i`    |
//! | 3    | `K × (I·J)` | `i·J + j`    |
//!
//! With this layout the raw storage of the tensor *is* `X_(1)` (row-major) and also
//! `X_(3)ᵀ`, which the solver exploits to avoid copies.

use std::ops::{Index, IndexMut};

use crate::error::{shape, usage, BtdError, Result};
use crate::matrix::DenseMatrix;

/// Tensor dimensions `(I, J, K)`.
pub type Dims = (usize, usize, usize);

/// Unfolding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Shape of the unfolding of a tensor with the given dimensions.
    pub fn unfolded_shape(self, (i, j, k): Dims) -> (usize, usize) {
        match self {
            Mode::One => (i, j * k),
            Mode::Two => (j, k * i),
            Mode::Three => (k, i * j),
        }
    }
}

impl TryFrom<u8> for Mode {
    type Error = BtdError;

    fn try_from(m: u8) -> Result<Self> {
        match m {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(usage(format!("unfolding mode must be 1, 2 or 3, got {other}"))),
        }
    }
}

/// A dense real `I×J×K` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: Dims,
    values: Vec<f64>,
}

impl DenseTensor3 {
    /// Builds a tensor from values in the canonical layout. Rejects zero dimensions, wrong
    /// lengths and non-finite entries.
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if i == 0 || j == 0 || k == 0 {
            return Err(shape(format!("tensor dimensions must be positive, got {dims:?}")));
        }
        if values.len() != i * j * k {
            return Err(shape(format!("{i}x{j}x{k} tensor needs {} values, got {}", i * j * k, values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(BtdError::NonFinite(pos));
        }
        Ok(Self { dims, values })
    }

    pub(crate) fn from_vec(dims: Dims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.0 * dims.1 * dims.2);
        Self { dims, values }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::from_vec(dims, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (ni, nj, nk) = dims;
        let mut values = Vec::with_capacity(ni * nj * nk);
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(dims, values)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    /// Matricization along `mode`; a materialized copy.
    pub fn unfold(&self, mode: Mode) -> DenseMatrix {
        let (ni, nj, nk) = self.dims;
        match mode {
            Mode::One => DenseMatrix::from_vec(ni, nj * nk, self.values.clone()),
            Mode::Two => {
                let mut out = DenseMatrix::zeros(nj, nk * ni);
                for i in 0..ni {
                    for j in 0..nj {
                        let row = out.row_mut(j);
                        for k in 0..nk {
                            row[k * ni + i] = self.values[(i * nj + j) * nk + k];
                        }
                    }
                }
                out
            }
            Mode::Three => {
                let mut out = DenseMatrix::zeros(nk, ni * nj);
                let cols = ni * nj;
                let buf = out.as_mut_slice();
                for (ij, fiber) in self.values.chunks_exact(nk).enumerate() {
                    for (k, &v) in fiber.iter().enumerate() {
                        buf[k * cols + ij] = v;
                    }
                }
                out
            }
        }
    }

    /// Inverse of [`DenseTensor3::unfold`].
    pub fn fold(m: &DenseMatrix, mode: Mode, dims: Dims) -> Result<Self> {
        let expected = mode.unfolded_shape(dims);
        if m.shape() != expected || dims.0 * dims.1 * dims.2 == 0 {
            return Err(shape(format!(
                "mode-{mode:?} fold to {dims:?} needs a {expected:?} matrix, got {:?}",
                m.shape()
            )));
        }
        let (ni, nj, _) = dims;
        Ok(match mode {
            Mode::One => Self::from_vec(dims, m.as_slice().to_vec()),
            Mode::Two => Self::from_fn(dims, |i, j, k| m[(j, k * ni + i)]),
            Mode::Three => Self::from_fn(dims, |i, j, k| m[(k, i * nj + j)]),
        })
    }

    /// Frontal slice `X[:, :, k]` as an `I×J` matrix.
    pub fn frontal_slice(&self, k: usize) -> DenseMatrix {
        let (ni, nj, _) = self.dims;
        DenseMatrix::from_fn(ni, nj, |i, j| self[(i, j, k)])
    }

    /// Stacks `I×J` frontal slices into an `I×J×K` tensor.
    pub fn from_frontal_slices(slices: &[DenseMatrix]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| shape("no slices"))?;
        let (ni, nj) = first.shape();
        if slices.iter().any(|s| s.shape() != (ni, nj)) {
            return Err(shape("frontal slices of different shapes"));
        }
        Ok(Self::from_fn((ni, nj, slices.len()), |i, j, k| slices[k][(i, j)]))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_vec(self.dims, self.values.iter().map(|v| alpha * v).collect())
    }

    pub fn add(&self, other: &DenseTensor3) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseTensor3) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `‖self − other‖_F²` without allocating.
    pub fn distance_sq(&self, other: &DenseTensor3) -> Result<f64> {
        if self.dims != other.dims {
            return Err(shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor3) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn zip_with(&self, other: &DenseTensor3, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_vec(self.dims, values))
    }
}

impl Index<(usize, usize, usize)> for DenseTensor3 {
    type Output = f64;

    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.values[self.offset(i, j, k)]
    }
}

impl IndexMut<(usize, usize, usize)> for DenseTensor3 {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(i, j, k);
        &mut self.values[o]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dims: Dims) -> DenseTensor3 {
        DenseTensor3::from_fn(dims, |i, j, k| (i * 100 + j * 10 + k) as f64 - 7.5)
    }

    #[test]
    fn scalar_tensor_unfolds_to_scalar_matrix() {
        let t = DenseTensor3::new((1, 1, 1), vec![4.25]).unwrap();
        for m in Mode::ALL {
            let u = t.unfold(m);
            assert_eq!(u.shape(), (1, 1));
            assert_eq!(u[(0, 0)], 4.25);
        }
    }

    #[test]
    fn rank_one_mode1_unfolding() {
        // a = (1,2), b = (3), c = (4,5)
        let a = [1.0, 2.0];
        let b = [3.0];
        let c = [4.0, 5.0];
        let t = DenseTensor3::from_fn((2, 1, 2), |i, j, k| a[i] * b[j] * c[k]);
        let x1 = t.unfold(Mode::One);
        assert_eq!(x1, DenseMatrix::new(2, 2, vec![12.0, 15.0, 24.0, 30.0]).unwrap());
    }

    #[test]
    fn unfold_column_conventions() {
        let dims = (3, 4, 2);
        let t = sample(dims);
        let (x1, x2, x3) = (t.unfold(Mode::One), t.unfold(Mode::Two), t.unfold(Mode::Three));
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    let v = t[(i, j, k)];
                    assert_eq!(x1[(i, j * 2 + k)], v);
                    assert_eq!(x2[(j, k * 3 + i)], v);
                    assert_eq!(x3[(k, i * 4 + j)], v);
                }
            }
        }
    }

    #[test]
    fn fold_inverts_unfold() {
        let dims = (4, 3, 2);
        let t = sample(dims);
        for m in Mode::ALL {
            assert_eq!(DenseTensor3::fold(&t.unfold(m), m, dims).unwrap(), t);
        }
        let z = DenseTensor3::fold(&DenseMatrix::zeros(3, 8), Mode::Two, dims).unwrap();
        assert_eq!(z, DenseTensor3::zeros(dims));
    }

    #[test]
    fn fold_rejects_wrong_shape_and_bad_mode() {
        let err = DenseTensor3::fold(&DenseMatrix::zeros(3, 3), Mode::One, (2, 2, 2));
        assert!(matches!(err, Err(BtdError::Shape(_))));
        assert!(matches!(Mode::try_from(4), Err(BtdError::Usage(_))));
        assert!(matches!(Mode::try_from(0), Err(BtdError::Usage(_))));
    }

    #[test]
    fn construction_checks() {
        assert!(DenseTensor3::new((2, 0, 1), vec![]).is_err());
        assert!(DenseTensor3::new((1, 1, 2), vec![1.0]).is_err());
        assert!(matches!(DenseTensor3::new((1, 1, 2), vec![1.0, f64::INFINITY]), Err(BtdError::NonFinite(1))));
    }

    #[test]
    fn frobenius_basics() {
        assert_eq!(DenseTensor3::zeros((2, 3, 4)).frobenius_norm(), 0.0);
        assert_eq!(DenseTensor3::new((1, 1, 1), vec![-3.0]).unwrap().frobenius_norm(), 3.0);
        let t = sample((3, 2, 2));
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..2 {
                    oracle += t[(i, j, k)] * t[(i, j, k)];
                }
            }
        }
        assert_eq!(t.frobenius_norm_sq(), oracle);
        assert!((t.scale(-2.5).frobenius_norm() - 2.5 * t.frobenius_norm()).abs() < 1e-12);
    }
}
