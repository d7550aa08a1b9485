//! Evaluation metrics: block-matched NMSE, relative reconstruction error and SSIM.

use crate::error::{shape, usage, Result};
use crate::matrix::DenseMatrix;
use crate::model::BtdFactors;
use crate::tensor::DenseTensor3;

/// Optimal injective matching of rows to columns of a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `pairs[i] = (row, col)`, one per assigned row, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub cost: DenseMatrix,
}

impl AssignmentResult {
    /// Column assigned to `row`, if any.
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    /// Row assigned to `col`, if any.
    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs (Hungarian method with potentials,
/// `O(n²m)`).
pub fn linear_assignment(cost: &DenseMatrix) -> AssignmentResult {
    let (nr, nc) = cost.shape();
    let transposed = nr > nc;
    let c = if transposed { cost.transpose() } else { cost.clone() };
    let (n, m) = c.shape();

    // 1-based shortest augmenting path formulation; way[j] is the predecessor column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| if transposed { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, s)| cost[(r, s)]).sum();
    AssignmentResult { pairs, total_cost, cost: cost.clone() }
}

/// Block-matched NMSE: `(1/R) Σ_r ‖X_r − X̂_π(r)‖² / ‖X_r‖²` over the true blocks, with the
/// matching `π` chosen by [`linear_assignment`] on the block tensors. Surplus estimated
/// blocks are ignored; a true block left unmatched (fewer estimated blocks) costs 1.
///
/// The returned assignment has rows = true blocks and columns = estimated blocks.
pub fn nmse_blocks(truth: &BtdFactors, est: &BtdFactors) -> Result<(f64, AssignmentResult)> {
    if truth.dims() != est.dims() {
        return Err(shape(format!("truth dims {:?} vs estimate dims {:?}", truth.dims(), est.dims())));
    }
    let r_true = truth.num_blocks();
    let r_est = est.num_blocks();
    let true_blocks: Vec<DenseTensor3> = (0..r_true).map(|r| truth.block_tensor(r)).collect();
    let est_blocks: Vec<DenseTensor3> = (0..r_est).map(|s| est.block_tensor(s)).collect();
    let norms: Vec<f64> = true_blocks.iter().map(DenseTensor3::frobenius_norm_sq).collect();
    if let Some(r) = norms.iter().position(|&n| n == 0.0) {
        return Err(usage(format!("true block {r} has zero norm")));
    }

    let cost = DenseMatrix::from_fn(r_true, r_est, |r, s| {
        true_blocks[r].distance_sq(&est_blocks[s]).expect("same dims") / norms[r]
    });
    // Dummy columns of cost 1 stand for "no estimated block".
    let padded_cols = r_est.max(r_true);
    let padded = DenseMatrix::from_fn(r_true, padded_cols, |r, s| if s < r_est { cost[(r, s)] } else { 1.0 });
    let solved = linear_assignment(&padded);
    let nmse = solved.total_cost / r_true as f64;
    let pairs: Vec<(usize, usize)> = solved.pairs.into_iter().filter(|&(_, s)| s < r_est).collect();
    let total_cost = pairs.iter().map(|&(r, s)| cost[(r, s)]).sum();
    Ok((nmse, AssignmentResult { pairs, total_cost, cost }))
}

/// `‖Y − reconstruct(F)‖_F / ‖Y‖_F`.
pub fn reconstruction_error(y: &DenseTensor3, f: &BtdFactors) -> Result<f64> {
    let norm = y.frobenius_norm();
    if norm == 0.0 {
        return Err(usage("relative error of an all-zero tensor"));
    }
    Ok(y.distance_sq(&f.reconstruct())?.sqrt() / norm)
}

pub const DEFAULT_SSIM_WINDOW: usize = 7;

/// Mean SSIM over all fully contained `w×w` windows with uniform weights and population
/// statistics, `C1 = (0.01·range)²`, `C2 = (0.03·range)²`. A window larger than the image is
/// reduced to the largest odd size that fits.
pub fn ssim(a: &DenseMatrix, b: &DenseMatrix, window: usize, dynamic_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape(format!("SSIM of {:?} and {:?} images", a.shape(), b.shape())));
    }
    if window < 3 || window.is_multiple_of(2) {
        return Err(usage(format!("SSIM window must be odd and at least 3, got {window}")));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(usage("SSIM dynamic range must be positive"));
    }
    let (rows, cols) = a.shape();
    let fit = rows.min(cols);
    let w = if window <= fit {
        window
    } else if fit % 2 == 1 {
        fit
    } else {
        fit - 1
    };

    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let sa = SummedArea::new(rows, cols, |i, j| a[(i, j)]);
    let sb = SummedArea::new(rows, cols, |i, j| b[(i, j)]);
    let saa = SummedArea::new(rows, cols, |i, j| a[(i, j)] * a[(i, j)]);
    let sbb = SummedArea::new(rows, cols, |i, j| b[(i, j)] * b[(i, j)]);
    let sab = SummedArea::new(rows, cols, |i, j| a[(i, j)] * b[(i, j)]);
    let n = (w * w) as f64;

    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=rows - w {
        for j in 0..=cols - w {
            let mu_a = sa.window(i, j, w) / n;
            let mu_b = sb.window(i, j, w) / n;
            let var_a = saa.window(i, j, w) / n - mu_a * mu_a;
            let var_b = sbb.window(i, j, w) / n - mu_b * mu_b;
            let cov = sab.window(i, j, w) / n - mu_a * mu_b;
            total += ssim_index(mu_a, mu_b, var_a, var_b, cov, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn ssim_index(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

struct SummedArea {
    cols: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let stride = cols + 1;
        let mut table = vec![0.0; (rows + 1) * stride];
        for i in 0..rows {
            let mut row_sum = 0.0;
            for j in 0..cols {
                row_sum += f(i, j);
                table[(i + 1) * stride + j + 1] = table[i * stride + j + 1] + row_sum;
            }
        }
        Self { cols, table }
    }

    fn window(&self, i: usize, j: usize, w: usize) -> f64 {
        let s = self.cols + 1;
        let at = |r: usize, c: usize| self.table[r * s + c];
        at(i + w, j + w) - at(i, j + w) - at(i + w, j) + at(i, j)
    }
}

/// SSIM per frontal slice (band `k`) between two cubes. Without an explicit range each band
/// uses the max − min of its reference slice in `reference` (1 for a constant slice).
pub fn band_ssim_curve(
    reference: &DenseTensor3,
    other: &DenseTensor3,
    window: usize,
    dynamic_range: Option<f64>,
) -> Result<Vec<(usize, f64)>> {
    if reference.dims() != other.dims() {
        return Err(shape(format!("cubes {:?} and {:?} differ", reference.dims(), other.dims())));
    }
    (0..reference.dims().2)
        .map(|k| {
            let band = reference.frontal_slice(k);
            let range = dynamic_range.unwrap_or_else(|| image_range(&band));
            Ok((k, ssim(&band, &other.frontal_slice(k), window, range)?))
        })
        .collect()
}

/// `max − min` of the entries, or 1 when they are all equal.
pub fn image_range(m: &DenseMatrix) -> f64 {
    let (lo, hi) = m.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}
