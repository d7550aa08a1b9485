//! Rank-(Lr,Lr,1) block-term factors.
//!
//! A decomposition with `R` blocks is `X = Σ_r (A_r B_rᵀ) ∘ c_r`, where `A_r` is `I×L_r`,
//! `B_r` is `J×L_r` and `c_r` is column `r` of the `K×R` matrix `C`. The model is invariant
//! to permuting blocks and to `(αA_r, B_r, c_r/α)`-type rescalings.

use crate::error::{shape, Result};
use crate::matrix::DenseMatrix;
use crate::products::{khatri_rao_columnwise, khatri_rao_partitioned};
use crate::rng::SplitMix64;
use crate::tensor::{DenseTensor3, Dims, Mode};

/// Default relative energy below which a block counts as negligible.
pub const DEFAULT_BLOCK_TOL: f64 = 1e-2;
/// Default relative energy below which a factor column counts as negligible.
pub const DEFAULT_COL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct BtdFactors {
    a: Vec<DenseMatrix>,
    b: Vec<DenseMatrix>,
    c: DenseMatrix,
}

impl BtdFactors {
    /// Validates block counts, per-block ranks and shared row counts.
    pub fn new(a: Vec<DenseMatrix>, b: Vec<DenseMatrix>, c: DenseMatrix) -> Result<Self> {
        let r = a.len();
        if r == 0 {
            return Err(shape("a decomposition needs at least one block"));
        }
        if b.len() != r || c.cols() != r {
            return Err(shape(format!("{} A blocks, {} B blocks and {} columns of C", r, b.len(), c.cols())));
        }
        let (ni, nj) = (a[0].rows(), b[0].rows());
        for (idx, (ar, br)) in a.iter().zip(&b).enumerate() {
            if ar.cols() == 0 || ar.cols() != br.cols() {
                return Err(shape(format!("block {idx}: A has {} columns, B has {}", ar.cols(), br.cols())));
            }
            if ar.rows() != ni || br.rows() != nj {
                return Err(shape(format!("block {idx} has inconsistent row counts")));
            }
        }
        if ni == 0 || nj == 0 || c.rows() == 0 {
            return Err(shape("factor dimensions must be positive"));
        }
        Ok(Self { a, b, c })
    }

    pub fn zeros(dims: Dims, ranks: &[usize]) -> Result<Self> {
        let (ni, nj, nk) = dims;
        Self::new(
            ranks.iter().map(|&l| DenseMatrix::zeros(ni, l)).collect(),
            ranks.iter().map(|&l| DenseMatrix::zeros(nj, l)).collect(),
            DenseMatrix::zeros(nk, ranks.len()),
        )
    }

    /// I.i.d. standard Gaussian factors. Draw order: for each block `r`, the entries of
    /// `A_r` then `B_r` (row-major); then `C` (row-major).
    pub fn random_gaussian(dims: Dims, ranks: &[usize], rng: &mut SplitMix64) -> Result<Self> {
        let (ni, nj, nk) = dims;
        let mut a = Vec::with_capacity(ranks.len());
        let mut b = Vec::with_capacity(ranks.len());
        for &l in ranks {
            a.push(DenseMatrix::from_vec(ni, l, rng.gaussian_vec(ni * l)));
            b.push(DenseMatrix::from_vec(nj, l, rng.gaussian_vec(nj * l)));
        }
        let c = DenseMatrix::from_vec(nk, ranks.len(), rng.gaussian_vec(nk * ranks.len()));
        Self::new(a, b, c)
    }

    pub fn num_blocks(&self) -> usize {
        self.a.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.a.iter().map(DenseMatrix::cols).collect()
    }

    pub fn total_rank(&self) -> usize {
        self.a.iter().map(DenseMatrix::cols).sum()
    }

    pub fn dims(&self) -> Dims {
        (self.a[0].rows(), self.b[0].rows(), self.c.rows())
    }

    pub fn a_blocks(&self) -> &[DenseMatrix] {
        &self.a
    }

    pub fn b_blocks(&self) -> &[DenseMatrix] {
        &self.b
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    /// `A = [A_1 … A_R]`.
    pub fn a_concat(&self) -> DenseMatrix {
        DenseMatrix::hstack(&self.a).expect("blocks share a row count")
    }

    /// `B = [B_1 … B_R]`.
    pub fn b_concat(&self) -> DenseMatrix {
        DenseMatrix::hstack(&self.b).expect("blocks share a row count")
    }

    /// Column `r` of `C`.
    pub fn c_column(&self, r: usize) -> DenseMatrix {
        DenseMatrix::column_vector(&self.c.column(r))
    }

    pub fn c_columns(&self) -> Vec<DenseMatrix> {
        (0..self.num_blocks()).map(|r| self.c_column(r)).collect()
    }

    /// Replaces `A` by the blocks of a concatenated `I×ΣL_r` matrix.
    pub fn set_a_concat(&mut self, a: &DenseMatrix) {
        self.a = split_blocks(a, &self.ranks());
    }

    pub fn set_b_concat(&mut self, b: &DenseMatrix) {
        self.b = split_blocks(b, &self.ranks());
    }

    pub fn set_c(&mut self, c: DenseMatrix) {
        debug_assert_eq!(c.shape(), self.c.shape());
        self.c = c;
    }

    /// `E_r = A_r B_rᵀ`.
    pub fn block_matrix(&self, r: usize) -> DenseMatrix {
        self.a[r].matmul_t(&self.b[r]).expect("A_r and B_r share a column count")
    }

    /// The block tensor `E_r ∘ c_r`.
    pub fn block_tensor(&self, r: usize) -> DenseTensor3 {
        let e = self.block_matrix(r);
        let c = self.c.column(r);
        let (ni, nj, nk) = self.dims();
        let mut values = Vec::with_capacity(ni * nj * nk);
        for &eij in e.as_slice() {
            values.extend(c.iter().map(|ck| eij * ck));
        }
        DenseTensor3::from_vec((ni, nj, nk), values)
    }

    /// `S = [(A_1 ⊙_c B_1)1 … (A_R ⊙_c B_R)1]`, an `IJ×R` matrix whose column `r` is
    /// `vec(A_r B_rᵀ)` in row-major order.
    pub fn s_matrix(&self) -> DenseMatrix {
        build_s(&self.a, &self.b).expect("validated factors")
    }

    /// `X = Σ_r (A_r B_rᵀ) ∘ c_r`, evaluated as the mode-3 identity `X_(3)ᵀ = S Cᵀ`, whose
    /// `IJ×K` row-major storage is exactly the tensor layout.
    pub fn reconstruct(&self) -> DenseTensor3 {
        let x3t = self.s_matrix().matmul_t(&self.c).expect("S and C share R");
        DenseTensor3::from_vec(self.dims(), x3t.into_vec())
    }

    /// `X` via `X_(1)ᵀ = (B ⊙ C) Aᵀ`.
    pub fn reconstruct_mode1(&self) -> DenseTensor3 {
        let p = khatri_rao_partitioned(&self.b, &self.c_columns()).expect("validated factors");
        let x1t = p.matmul_t(&self.a_concat()).expect("shapes");
        DenseTensor3::fold(&x1t.transpose(), Mode::One, self.dims()).expect("shapes")
    }

    /// `X` via `X_(2)ᵀ = (C ⊙ A) Bᵀ`.
    pub fn reconstruct_mode2(&self) -> DenseTensor3 {
        let q = khatri_rao_partitioned(&self.c_columns(), &self.a).expect("validated factors");
        let x2t = q.matmul_t(&self.b_concat()).expect("shapes");
        DenseTensor3::fold(&x2t.transpose(), Mode::Two, self.dims()).expect("shapes")
    }

    /// Joint column energies `√(‖a_rl‖² + ‖b_rl‖²)`, per block.
    pub fn column_energies(&self) -> Vec<Vec<f64>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(ar, br)| (0..ar.cols()).map(|l| (ar.column_norm_sq(l) + br.column_norm_sq(l)).sqrt()).collect())
            .collect()
    }

    /// `‖c_r‖₂` for every block.
    pub fn c_energies(&self) -> Vec<f64> {
        (0..self.num_blocks()).map(|r| self.c.column_norm_sq(r).sqrt()).collect()
    }

    /// The `2×R` matrix with rows `‖G_r‖_{1,2}` and `‖c_r‖₂`, where `G_r` stacks `A_r` over `B_r`.
    pub fn matrix_f(&self) -> DenseMatrix {
        let g: Vec<f64> = self.column_energies().iter().map(|e| e.iter().sum()).collect();
        let c = self.c_energies();
        let r = self.num_blocks();
        DenseMatrix::from_fn(2, r, |row, col| if row == 0 { g[col] } else { c[col] })
    }

    /// Smoothed hierarchical group norm, without the `λ` multiplier:
    /// `Σ_r √( (Σ_l √(‖a_rl‖² + ‖b_rl‖² + η²))² + ‖c_r‖² + η² )`.
    pub fn regularizer_value(&self, eta: f64) -> f64 {
        let eta2 = eta * eta;
        self.a
            .iter()
            .zip(&self.b)
            .enumerate()
            .map(|(r, (ar, br))| {
                let inner: f64 =
                    (0..ar.cols()).map(|l| (ar.column_norm_sq(l) + br.column_norm_sq(l) + eta2).sqrt()).sum();
                (inner * inner + self.c.column_norm_sq(r) + eta2).sqrt()
            })
            .sum()
    }

    /// Decides which blocks and columns carry non-negligible energy.
    ///
    /// Block `r` is active iff `‖c_r‖ ≥ block_tol · max_s ‖c_s‖`. Inside active blocks,
    /// column `l` is active iff its joint energy is at least `col_tol` times the largest joint
    /// energy among active blocks. At least one block, and one column per active block, is
    /// always reported.
    pub fn count_effective_ranks(&self, block_tol: f64, col_tol: f64) -> RankEstimate {
        let column_energies = self.column_energies();
        let c_energies = self.c_energies();
        let active_blocks = active_blocks(&c_energies, block_tol);
        let active_columns = active_columns(&column_energies, &active_blocks, col_tol);
        RankEstimate {
            r_est: active_blocks.len(),
            l_est: active_columns.iter().map(Vec::len).collect(),
            active_blocks,
            column_energies,
            c_energies,
        }
    }

    /// Drops blocks whose `C` column energy fails the block rule. Keeps at least one block.
    pub fn prune_blocks(&self, block_tol: f64) -> BtdFactors {
        let keep = active_blocks(&self.c_energies(), block_tol);
        if keep.len() == self.num_blocks() {
            return self.clone();
        }
        BtdFactors {
            a: keep.iter().map(|&r| self.a[r].clone()).collect(),
            b: keep.iter().map(|&r| self.b[r].clone()).collect(),
            c: self.c.select_columns(&keep),
        }
    }

    /// Drops columns of `A_r` and `B_r` jointly when their energy fails the column rule
    /// (relative to the largest column over all blocks). Every block keeps at least one column.
    pub fn prune_columns(&self, col_tol: f64) -> BtdFactors {
        let energies = self.column_energies();
        let all: Vec<usize> = (0..self.num_blocks()).collect();
        let keep = active_columns(&energies, &all, col_tol);
        if keep.iter().zip(&energies).all(|(k, e)| k.len() == e.len()) {
            return self.clone();
        }
        BtdFactors {
            a: self.a.iter().zip(&keep).map(|(m, k)| m.select_columns(k)).collect(),
            b: self.b.iter().zip(&keep).map(|(m, k)| m.select_columns(k)).collect(),
            c: self.c.clone(),
        }
    }

    /// Keeps only the listed blocks, in the given order.
    pub fn select_blocks(&self, blocks: &[usize]) -> Result<BtdFactors> {
        if blocks.iter().any(|&r| r >= self.num_blocks()) {
            return Err(shape("block index out of range"));
        }
        BtdFactors::new(
            blocks.iter().map(|&r| self.a[r].clone()).collect(),
            blocks.iter().map(|&r| self.b[r].clone()).collect(),
            self.c.select_columns(blocks),
        )
    }
}

/// Result of [`BtdFactors::count_effective_ranks`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankEstimate {
    pub r_est: usize,
    /// Active column count of each active block, in block order.
    pub l_est: Vec<usize>,
    /// Indices (into the factors) of the active blocks.
    pub active_blocks: Vec<usize>,
    /// Joint column energies of every block, active or not.
    pub column_energies: Vec<Vec<f64>>,
    pub c_energies: Vec<f64>,
}

impl RankEstimate {
    /// The `L_r` estimates as a sorted multiset.
    pub fn sorted_ranks(&self) -> Vec<usize> {
        let mut l = self.l_est.clone();
        l.sort_unstable();
        l
    }
}

/// `S` matrix from explicit blocks: column `r` is `(A_r ⊙_c B_r) 1_{L_r}`.
pub fn build_s(a_blocks: &[DenseMatrix], b_blocks: &[DenseMatrix]) -> Result<DenseMatrix> {
    if a_blocks.len() != b_blocks.len() {
        return Err(shape("S needs as many A blocks as B blocks"));
    }
    let (ni, nj) = match (a_blocks.first(), b_blocks.first()) {
        (Some(a), Some(b)) => (a.rows(), b.rows()),
        _ => return Ok(DenseMatrix::zeros(0, 0)),
    };
    let r = a_blocks.len();
    let mut s = DenseMatrix::zeros(ni * nj, r);
    for (idx, (ar, br)) in a_blocks.iter().zip(b_blocks).enumerate() {
        if ar.cols() != br.cols() {
            return Err(shape(format!("block {idx}: A_r and B_r column counts differ")));
        }
        let col = if ar.cols() == 1 {
            khatri_rao_columnwise(ar, br)?.into_vec()
        } else {
            // (A_r ⊙_c B_r) 1 = vec(A_r B_rᵀ)
            ar.matmul_t(br)?.into_vec()
        };
        for (row, v) in col.into_iter().enumerate() {
            s[(row, idx)] = v;
        }
    }
    Ok(s)
}

fn split_blocks(m: &DenseMatrix, ranks: &[usize]) -> Vec<DenseMatrix> {
    debug_assert_eq!(m.cols(), ranks.iter().sum::<usize>());
    let mut start = 0;
    ranks
        .iter()
        .map(|&l| {
            let blk = m.column_range(start, l);
            start += l;
            blk
        })
        .collect()
}

fn active_blocks(c_energies: &[f64], block_tol: f64) -> Vec<usize> {
    let max = c_energies.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = if max > 0.0 {
        (0..c_energies.len()).filter(|&r| c_energies[r] >= block_tol * max).collect()
    } else {
        Vec::new()
    };
    if active.is_empty() {
        vec![argmax(c_energies)]
    } else {
        active
    }
}

fn active_columns(energies: &[Vec<f64>], blocks: &[usize], col_tol: f64) -> Vec<Vec<usize>> {
    let max = blocks.iter().flat_map(|&r| energies[r].iter().copied()).fold(0.0, f64::max);
    blocks
        .iter()
        .map(|&r| {
            let e = &energies[r];
            let cols: Vec<usize> =
                if max > 0.0 { (0..e.len()).filter(|&l| e[l] >= col_tol * max).collect() } else { Vec::new() };
            if cols.is_empty() {
                vec![argmax(e)]
            } else {
                cols
            }
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) }).0
}
