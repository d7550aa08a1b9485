//! Hierarchically reweighted alternating least squares for the block-term decomposition.
//!
//! The solver minimizes
//!
//! ```text
//! ½‖Y − Σ_r A_r B_rᵀ ∘ c_r‖²_F + λ Σ_r √( (Σ_l √(‖a_rl‖² + ‖b_rl‖² + η²))² + ‖c_r‖² + η² )
//! ```
//!
//! starting from overestimated ranks `R_ini`, `L_ini`. Each iteration computes the diagonal
//! reweighting matrices from the current factors and then solves three ridge-type least
//! squares problems in closed form, for `A`, `B` and `C`. The regularizer drives whole
//! blocks (through `D1`) and single columns of `A_r`, `B_r` (through `D2`) to zero; the
//! surviving structure is the rank estimate.
//!
//! ## Weights
//!
//! Writing `t_rl = √(‖a_rl‖² + ‖b_rl‖² + η²)`, `T_r = Σ_l t_rl` and
//! `φ_r = √(T_r² + ‖c_r‖² + η²)`, the reweighting diagonals are `D1(r) = 1/φ_r` and
//! `D2(r,l) = 1/t_rl`. The gradient of the regularizer with respect to `a_rl` is
//! `T_r·D1(r)·D2(r,l)·a_rl`. The default ([`Weighting::Product`]) puts the bare product
//! `D1·D2` on the columns of `A` and `B`. That quadratic model has the right sparsity
//! pattern and works with the usual `λ` rule, but for `T_r ≠ 1` it neither touches nor
//! bounds the objective, so the objective can go up between iterations.
//! [`Weighting::Majorizer`] uses `T_r·D1·D2` instead, which gives a tangent upper bound and
//! hence monotone descent; it needs a much smaller `λ` for the same amount of pruning. The
//! `C` update uses `D1` in both cases, which is exact.

use std::time::Instant;

use crate::error::{shape, usage, BtdError, Result};
use crate::linalg::{solve_psd_right_min_norm, solve_spd_right, symmetric_eigenvalues};
use crate::matrix::DenseMatrix;
use crate::model::{BtdFactors, RankEstimate, DEFAULT_BLOCK_TOL, DEFAULT_COL_TOL};
use crate::products::khatri_rao_partitioned;
use crate::rng::SplitMix64;
use crate::tensor::{DenseTensor3, Dims, Mode};

/// How `λ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Lambda(f64),
    /// `λ = L_ini·R_ini·(I+J+K)·σ̂` from a guess `σ̂` of the noise standard deviation.
    NoiseLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMode {
    Off,
    Blocks,
    BlocksAndColumns,
}

/// Which factors the `B` and `C` solves see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Cyclic: `B` uses the fresh `A`, `C` uses the fresh `A` and `B`.
    GaussSeidel,
    /// All three solves use the factors from the start of the iteration.
    Simultaneous,
}

/// Column weights used in the `A` and `B` solves. See the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Majorizer,
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    RandomGaussian,
    Provided(BtdFactors),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub r_ini: usize,
    pub l_ini: usize,
    pub regularization: Regularization,
    pub eta: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub prune: PruneMode,
    pub block_tol: f64,
    pub col_tol: f64,
    pub update_mode: UpdateMode,
    pub weighting: Weighting,
    pub seed: u64,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            r_ini: 10,
            l_ini: 10,
            regularization: Regularization::NoiseLevel(0.0),
            eta: 1e-8,
            max_iters: 200,
            rel_tol: 1e-5,
            prune: PruneMode::Blocks,
            block_tol: DEFAULT_BLOCK_TOL,
            col_tol: DEFAULT_COL_TOL,
            update_mode: UpdateMode::GaussSeidel,
            weighting: Weighting::Product,
            seed: 0,
            init: Init::RandomGaussian,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_ini == 0 || self.l_ini == 0 {
            return Err(usage("R_ini and L_ini must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(usage("eta must be positive"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(usage("rel_tol must be positive"));
        }
        if !(self.block_tol > 0.0 && self.block_tol < 1.0 && self.col_tol > 0.0 && self.col_tol < 1.0) {
            return Err(usage("pruning tolerances must lie in (0, 1)"));
        }
        match self.regularization {
            Regularization::Lambda(l) if !(l >= 0.0 && l.is_finite()) => {
                Err(usage("lambda must be finite and non-negative"))
            }
            Regularization::NoiseLevel(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(usage("sigma_hat must be finite and non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Resolves `λ` for the data tensor `y`.
    pub fn resolve_lambda(&self, y: &DenseTensor3) -> f64 {
        match self.regularization {
            Regularization::Lambda(l) => l,
            Regularization::NoiseLevel(s) => lambda_heuristic(y.dims(), self.r_ini, self.l_ini, s, y.frobenius_norm()),
        }
    }
}

/// `λ = L_ini·R_ini·(I+J+K)·σ̂`, falling back to [`lambda_floor`] when `σ̂ = 0`.
pub fn lambda_heuristic(dims: Dims, r_ini: usize, l_ini: usize, sigma_hat: f64, y_norm: f64) -> f64 {
    if sigma_hat > 0.0 {
        (l_ini * r_ini * (dims.0 + dims.1 + dims.2)) as f64 * sigma_hat
    } else {
        lambda_floor(y_norm)
    }
}

/// Smallest `λ` used for noise-free data: `1e−8·‖Y‖_F` (or `1e−8` for an all-zero `Y`), which
/// keeps every solve positive definite while biasing the fit negligibly.
pub fn lambda_floor(y_norm: f64) -> f64 {
    1e-8 * if y_norm > 0.0 { y_norm } else { 1.0 }
}

/// `D1(r) = [(Σ_l √(‖a_rl‖² + ‖b_rl‖² + η²))² + ‖c_r‖² + η²]^{-1/2}`.
pub fn compute_d1(f: &BtdFactors, eta: f64) -> Vec<f64> {
    let eta2 = eta * eta;
    let c = f.c();
    block_sums(f, eta).iter().enumerate().map(|(r, t)| 1.0 / (t * t + c.column_norm_sq(r) + eta2).sqrt()).collect()
}

/// `D2(r,l) = (‖a_rl‖² + ‖b_rl‖² + η²)^{-1/2}`, blocks concatenated in order.
pub fn compute_d2(f: &BtdFactors, eta: f64) -> Vec<f64> {
    let eta2 = eta * eta;
    f.a_blocks()
        .iter()
        .zip(f.b_blocks())
        .flat_map(|(ar, br)| {
            (0..ar.cols()).map(move |l| 1.0 / (ar.column_norm_sq(l) + br.column_norm_sq(l) + eta2).sqrt())
        })
        .collect()
}

/// `T_r = Σ_l √(‖a_rl‖² + ‖b_rl‖² + η²)`, the smoothed `‖G_r‖_{1,2}`.
pub fn block_sums(f: &BtdFactors, eta: f64) -> Vec<f64> {
    let eta2 = eta * eta;
    f.a_blocks()
        .iter()
        .zip(f.b_blocks())
        .map(|(ar, br)| (0..ar.cols()).map(|l| (ar.column_norm_sq(l) + br.column_norm_sq(l) + eta2).sqrt()).sum())
        .collect()
}

/// `D = (D1 ⊗ I) D2` generalized to per-block ranks: entry `(r,l)` is `D1(r)·D2(r,l)`.
pub fn compose_d(d1: &[f64], d2: &[f64], ranks: &[usize]) -> Result<Vec<f64>> {
    if d1.len() != ranks.len() || d2.len() != ranks.iter().sum::<usize>() {
        return Err(shape(format!(
            "D1 of length {} and D2 of length {} do not match ranks {ranks:?}",
            d1.len(),
            d2.len()
        )));
    }
    let mut out = Vec::with_capacity(d2.len());
    let mut offset = 0;
    for (r, &l) in ranks.iter().enumerate() {
        out.extend(d2[offset..offset + l].iter().map(|d| d1[r] * d));
        offset += l;
    }
    Ok(out)
}

/// Column weights of the `A`/`B` solves for the given weighting.
pub fn ab_weights(f: &BtdFactors, eta: f64, weighting: Weighting) -> Vec<f64> {
    let ranks = f.ranks();
    let d = compose_d(&compute_d1(f, eta), &compute_d2(f, eta), &ranks).expect("lengths from the same factors");
    match weighting {
        Weighting::Product => d,
        Weighting::Majorizer => {
            let t = block_sums(f, eta);
            let mut offset = 0;
            let mut out = d;
            for (r, &l) in ranks.iter().enumerate() {
                out[offset..offset + l].iter_mut().for_each(|w| *w *= t[r]);
                offset += l;
            }
            out
        }
    }
}

/// Minimizes `½‖Y_(n) − X Mᵀ‖² + (λ/2) Σ_c w_c ‖x_c‖²` over `X`: solves
/// `X (MᵀM + λ diag(w)) = Y_(n) M` by Cholesky.
fn regularized_ls(unfolding: &DenseMatrix, design: &DenseMatrix, w: &[f64], lambda: f64) -> Result<DenseMatrix> {
    if unfolding.cols() != design.rows() || design.cols() != w.len() {
        return Err(shape(format!(
            "unfolding {:?}, design {:?}, {} weights",
            unfolding.shape(),
            design.shape(),
            w.len()
        )));
    }
    let mut gram = design.t_matmul(design)?;
    add_weighted_diagonal(&mut gram, w, lambda);
    solve_regularized(&unfolding.matmul(design)?, &gram, lambda)
}

/// Cholesky solve of the regularized normal equations. For `λ > 0` the system is positive
/// definite in exact arithmetic, so a Cholesky breakdown can only come from rounding (huge
/// weights on dead columns next to nearly collinear live ones); the symmetric eigensolver
/// handles that case. With `λ = 0` a singular Gram is reported.
fn solve_regularized(rhs: &DenseMatrix, gram: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    match solve_spd_right(rhs, gram) {
        Err(BtdError::NotPositiveDefinite(_)) if lambda > 0.0 => solve_psd_right_min_norm(rhs, gram),
        other => other,
    }
}

fn add_weighted_diagonal(gram: &mut DenseMatrix, w: &[f64], lambda: f64) {
    for (c, wc) in w.iter().enumerate() {
        gram[(c, c)] += lambda * wc;
    }
}

/// `A = Y_(1) P (PᵀP + λD)⁻¹` with `P = B ⊙ C`, computed by an SPD solve.
pub fn update_a(y1: &DenseMatrix, p: &DenseMatrix, d: &[f64], lambda: f64) -> Result<DenseMatrix> {
    regularized_ls(y1, p, d, lambda)
}

/// `B = Y_(2) Q (QᵀQ + λD)⁻¹` with `Q = C ⊙ A`.
pub fn update_b(y2: &DenseMatrix, q: &DenseMatrix, d: &[f64], lambda: f64) -> Result<DenseMatrix> {
    regularized_ls(y2, q, d, lambda)
}

/// `C = Y_(3) S (SᵀS + λD1)⁻¹`.
pub fn update_c(y3: &DenseMatrix, s: &DenseMatrix, d1: &[f64], lambda: f64) -> Result<DenseMatrix> {
    regularized_ls(y3, s, d1, lambda)
}

/// Penalized objective: `½‖Y − X‖² + λ·regularizer`.
pub fn objective(f: &BtdFactors, y: &DenseTensor3, lambda: f64, eta: f64) -> f64 {
    data_fit(f, y) + lambda * f.regularizer_value(eta)
}

/// `½‖Y − X‖²_F`.
pub fn data_fit(f: &BtdFactors, y: &DenseTensor3) -> f64 {
    0.5 * y.distance_sq(&f.reconstruct()).expect("factor dims match data")
}

/// Which factor a block sub-problem updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    A,
    B,
    C,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::A, Factor::B, Factor::C];

    fn mode(self) -> Mode {
        match self {
            Factor::A => Mode::One,
            Factor::B => Mode::Two,
            Factor::C => Mode::Three,
        }
    }
}

/// Precomputed quantities shared by the structured updates within one iteration.
///
/// The products `Y_(1) P`, `Y_(2) Q` and `Y_(3) S` and the Grams `PᵀP`, `QᵀQ`, `SᵀS` are
/// formed from the factor blocks without materializing the Khatri-Rao products:
/// `(Y_(1)P)_r = W_r B_r` and `(Y_(2)Q)_r = W_rᵀ A_r` with `W_r = Σ_k Y[:,:,k] c_r[k]`, and
/// `(PᵀP)_{(r,l),(s,m)} = (b_rlᵀb_sm)(c_rᵀc_s)`.
pub struct DataCache {
    dims: Dims,
    /// `Y` viewed as the `IJ×K` matrix `Y_(3)ᵀ`.
    y3t: DenseMatrix,
    norm_sq: f64,
}

impl DataCache {
    pub fn new(y: &DenseTensor3) -> Self {
        let (ni, nj, nk) = y.dims();
        Self {
            dims: y.dims(),
            y3t: DenseMatrix::from_vec(ni * nj, nk, y.as_slice().to_vec()),
            norm_sq: y.frobenius_norm_sq(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `[W_1 … W_R]` as `R` matrices of shape `I×J`.
    pub(crate) fn contract_mode3(&self, c: &DenseMatrix) -> Vec<DenseMatrix> {
        let (ni, nj, _) = self.dims;
        let w = self.y3t.matmul(c).expect("K matches");
        let r = c.cols();
        (0..r).map(|blk| DenseMatrix::from_vec(ni, nj, (0..ni * nj).map(|ij| w[(ij, blk)]).collect())).collect()
    }

    /// Closed-form minimizer for one factor given the others (taken from `f`) and the
    /// column weights `w`: the `A` and `B` solves use `ΣL_r` weights, the `C` solve `R`.
    pub fn closed_form_update(&self, f: &BtdFactors, factor: Factor, w: &[f64], lambda: f64) -> Result<DenseMatrix> {
        let ws = match factor {
            Factor::C => Vec::new(),
            _ => self.contract_mode3(f.c()),
        };
        self.update_with(f, factor, w, lambda, &ws)
    }

    fn update_with(
        &self,
        f: &BtdFactors,
        factor: Factor,
        w: &[f64],
        lambda: f64,
        ws: &[DenseMatrix],
    ) -> Result<DenseMatrix> {
        let (rhs, mut gram) = self.normal_equations(f, factor, ws)?;
        if w.len() != gram.rows() {
            return Err(shape(format!("{} weights for a {}-column factor", w.len(), gram.rows())));
        }
        add_weighted_diagonal(&mut gram, w, lambda);
        solve_regularized(&rhs, &gram, lambda)
    }

    /// Right-hand side `Y_(n) M` and Gram `MᵀM` for one factor; `ws` must hold the mode-3
    /// contractions for the `A` and `B` factors.
    pub(crate) fn normal_equations(
        &self,
        f: &BtdFactors,
        factor: Factor,
        ws: &[DenseMatrix],
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let cc = f.c().t_matmul(f.c())?;
        let ranks = f.ranks();
        let (rhs, gram) = match factor {
            Factor::A => {
                let parts: Vec<DenseMatrix> =
                    ws.iter().zip(f.b_blocks()).map(|(wr, br)| wr.matmul(br)).collect::<Result<_>>()?;
                let b = f.b_concat();
                (DenseMatrix::hstack(&parts)?, block_hadamard(&b.t_matmul(&b)?, &cc, &ranks))
            }
            Factor::B => {
                let parts: Vec<DenseMatrix> =
                    ws.iter().zip(f.a_blocks()).map(|(wr, ar)| wr.t_matmul(ar)).collect::<Result<_>>()?;
                let a = f.a_concat();
                (DenseMatrix::hstack(&parts)?, block_hadamard(&a.t_matmul(&a)?, &cc, &ranks))
            }
            Factor::C => {
                let s = f.s_matrix();
                (self.y3t.t_matmul(&s)?, s.t_matmul(&s)?)
            }
        };
        Ok((rhs, gram))
    }

    /// `½‖Y − X‖²` and the reconstruction error `‖Y − X‖_F`.
    pub(crate) fn fit(&self, f: &BtdFactors) -> (f64, f64) {
        let x = f.s_matrix().matmul_t(f.c()).expect("shapes");
        let d2: f64 = self.y3t.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        (0.5 * d2, d2.sqrt())
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

/// `(XᵀX)_{(r,l),(s,m)} · (CᵀC)_{r,s}`.
fn block_hadamard(xx: &DenseMatrix, cc: &DenseMatrix, ranks: &[usize]) -> DenseMatrix {
    let owner: Vec<usize> = ranks.iter().enumerate().flat_map(|(r, &l)| std::iter::repeat_n(r, l)).collect();
    DenseMatrix::from_fn(xx.rows(), xx.cols(), |p, q| xx[(p, q)] * cc[(owner[p], owner[q])])
}

/// One full iteration (weights, then the `A`, `B`, `C` solves), without pruning.
pub fn hirls_iteration(
    cache: &DataCache,
    f: &BtdFactors,
    lambda: f64,
    eta: f64,
    update_mode: UpdateMode,
    weighting: Weighting,
) -> Result<BtdFactors> {
    let w_ab = ab_weights(f, eta, weighting);
    let d1 = compute_d1(f, eta);
    let ws = cache.contract_mode3(f.c());
    let mut next = f.clone();
    match update_mode {
        UpdateMode::GaussSeidel => {
            let a = cache.update_with(&next, Factor::A, &w_ab, lambda, &ws)?;
            next.set_a_concat(&a);
            let b = cache.update_with(&next, Factor::B, &w_ab, lambda, &ws)?;
            next.set_b_concat(&b);
            let c = cache.update_with(&next, Factor::C, &d1, lambda, &[])?;
            next.set_c(c);
        }
        UpdateMode::Simultaneous => {
            let a = cache.update_with(f, Factor::A, &w_ab, lambda, &ws)?;
            let b = cache.update_with(f, Factor::B, &w_ab, lambda, &ws)?;
            let c = cache.update_with(f, Factor::C, &d1, lambda, &[])?;
            next.set_a_concat(&a);
            next.set_b_concat(&b);
            next.set_c(c);
        }
    }
    Ok(next)
}

/// One row of the solver trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Regularized objective.
    pub objective: f64,
    /// `½‖Y − X‖²`.
    pub data_fit: f64,
    /// Regularizer value without `λ`.
    pub reg_value: f64,
    /// Relative change of the reconstruction error `‖Y − X‖_F`.
    pub rel_diff: f64,
    pub active_r: usize,
    pub active_l: Vec<usize>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub lambda: f64,
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_data_fit(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.data_fit)
    }

    /// Objective values including the initial one.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective).chain(self.records.iter().map(|r| r.objective)).collect()
    }

    /// First iteration at which the stopping rule held, if any.
    pub fn stop_iteration(&self, rel_tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.rel_diff < rel_tol).map(|r| r.iter)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub factors: BtdFactors,
    pub trace: SolverTrace,
    pub ranks: RankEstimate,
}

/// Initial factors for a run.
pub fn initial_factors(dims: Dims, cfg: &SolverConfig) -> Result<BtdFactors> {
    match &cfg.init {
        Init::Provided(f) => {
            if f.dims() != dims {
                return Err(usage(format!("initial factors have dims {:?}, data has {dims:?}", f.dims())));
            }
            Ok(f.clone())
        }
        Init::RandomGaussian => {
            BtdFactors::random_gaussian(dims, &vec![cfg.l_ini; cfg.r_ini], &mut SplitMix64::new(cfg.seed))
        }
    }
}

/// Runs the solver to convergence or the iteration cap.
pub fn run_hirls(y: &DenseTensor3, cfg: &SolverConfig) -> Result<SolverOutput> {
    run_hirls_observed(y, cfg, |_, _| {})
}

/// [`run_hirls`] with a callback invoked after every iteration with the current factors.
pub fn run_hirls_observed(
    y: &DenseTensor3,
    cfg: &SolverConfig,
    mut observe: impl FnMut(usize, &BtdFactors),
) -> Result<SolverOutput> {
    cfg.validate()?;
    let lambda = cfg.resolve_lambda(y);
    let cache = DataCache::new(y);
    let mut f = initial_factors(y.dims(), cfg)?;
    let start = Instant::now();

    let (fit0, mut prev_err) = cache.fit(&f);
    let mut trace = SolverTrace {
        lambda,
        initial_objective: fit0 + lambda * f.regularizer_value(cfg.eta),
        records: Vec::new(),
        converged: false,
    };

    for iter in 1..=cfg.max_iters {
        f = hirls_iteration(&cache, &f, lambda, cfg.eta, cfg.update_mode, cfg.weighting)
            .map_err(|e| BtdError::Solver { iteration: iter, source: Box::new(e) })?;
        f = match cfg.prune {
            PruneMode::Off => f,
            PruneMode::Blocks => f.prune_blocks(cfg.block_tol),
            PruneMode::BlocksAndColumns => f.prune_blocks(cfg.block_tol).prune_columns(cfg.col_tol),
        };
        let (fit, err) = cache.fit(&f);
        let reg = f.regularizer_value(cfg.eta);
        let rel_diff = relative_difference(prev_err, err);
        prev_err = err;
        let est = f.count_effective_ranks(cfg.block_tol, cfg.col_tol);
        trace.records.push(IterationRecord {
            iter,
            objective: fit + lambda * reg,
            data_fit: fit,
            reg_value: reg,
            rel_diff,
            active_r: est.r_est,
            active_l: est.l_est,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        observe(iter, &f);
        if !trace.records.last().is_some_and(|r| r.objective.is_finite()) {
            return Err(BtdError::Solver {
                iteration: iter,
                source: Box::new(BtdError::NotPositiveDefinite("objective became non-finite".into())),
            });
        }
        if rel_diff < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }

    let ranks = f.count_effective_ranks(cfg.block_tol, cfg.col_tol);
    Ok(SolverOutput { factors: f, trace, ranks })
}

pub(crate) fn relative_difference(prev: f64, current: f64) -> f64 {
    if prev > 0.0 {
        (current - prev).abs() / prev
    } else if current == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Runs `n_starts` random restarts with seeds `seed, seed+1, …` and keeps the best.
///
/// Without ground truth the run with the smallest final data fit wins. With `truth`
/// (benchmark mode) the run with the smallest block-matched NMSE wins.
pub fn run_multistart(
    y: &DenseTensor3,
    cfg: &SolverConfig,
    n_starts: usize,
    truth: Option<&BtdFactors>,
) -> Result<SolverOutput> {
    if n_starts == 0 {
        return Err(usage("need at least one start"));
    }
    let mut best: Option<(f64, SolverOutput)> = None;
    for s in 0..n_starts {
        let run_cfg = SolverConfig { seed: cfg.seed.wrapping_add(s as u64), ..cfg.clone() };
        let out = run_hirls(y, &run_cfg)?;
        let score = match truth {
            Some(t) => crate::metrics::nmse_blocks(t, &out.factors)?.0,
            None => out.trace.final_data_fit(),
        };
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, out));
        }
    }
    Ok(best.expect("n_starts >= 1").1)
}

/// One block sub-problem at an expansion point: `f_X(X)` (data fit plus the full
/// regularizer with the other factors frozen), its tangent quadratic surrogate, and the
/// reweighted quadratic whose minimizer is the closed-form update.
///
/// Everything here uses explicit Khatri-Rao design matrices (`P = B⊙C`, `Q = C⊙A`, `S`),
/// independently of the structured products in [`DataCache`].
pub struct BlockProblem<'a> {
    at: &'a BtdFactors,
    factor: Factor,
    lambda: f64,
    eta: f64,
    weighting: Weighting,
    unfolding: DenseMatrix,
    design: DenseMatrix,
}

impl<'a> BlockProblem<'a> {
    pub fn new(
        y: &'a DenseTensor3,
        at: &'a BtdFactors,
        factor: Factor,
        lambda: f64,
        eta: f64,
        weighting: Weighting,
    ) -> Result<Self> {
        if y.dims() != at.dims() {
            return Err(shape("factor dims differ from data dims"));
        }
        let design = match factor {
            Factor::A => khatri_rao_partitioned(at.b_blocks(), &at.c_columns())?,
            Factor::B => khatri_rao_partitioned(&at.c_columns(), at.a_blocks())?,
            Factor::C => at.s_matrix(),
        };
        Ok(Self { at, factor, lambda, eta, weighting, unfolding: y.unfold(factor.mode()), design })
    }

    pub fn design(&self) -> &DenseMatrix {
        &self.design
    }

    pub fn unfolding(&self) -> &DenseMatrix {
        &self.unfolding
    }

    /// The factor's value at the expansion point (`A` and `B` concatenated over blocks).
    pub fn expansion_point(&self) -> DenseMatrix {
        factor_matrix(self.at, self.factor)
    }

    /// Factors with this block replaced by `x`.
    pub fn substitute(&self, x: &DenseMatrix) -> BtdFactors {
        let mut f = self.at.clone();
        match self.factor {
            Factor::A => f.set_a_concat(x),
            Factor::B => f.set_b_concat(x),
            Factor::C => f.set_c(x.clone()),
        }
        f
    }

    /// `f_X(X) = ½‖Y_(n)ᵀ − M Xᵀ‖² + λ·regularizer`.
    pub fn value(&self, x: &DenseMatrix) -> f64 {
        let resid = self.unfolding.sub(&x.matmul_t(&self.design).expect("shapes")).expect("shapes");
        0.5 * resid.frobenius_norm_sq() + self.lambda * self.substitute(x).regularizer_value(self.eta)
    }

    /// Analytic gradient of [`BlockProblem::value`].
    pub fn gradient(&self, x: &DenseMatrix) -> DenseMatrix {
        let resid = x.matmul_t(&self.design).and_then(|xm| xm.sub(&self.unfolding)).expect("shapes");
        let data = resid.matmul(&self.design).expect("shapes");
        data.add(&self.regularizer_gradient(x).scale(self.lambda)).expect("shapes")
    }

    /// Gradient of the regularizer (without `λ`) with respect to this block.
    pub fn regularizer_gradient(&self, x: &DenseMatrix) -> DenseMatrix {
        let f = self.substitute(x);
        let w = match self.factor {
            Factor::C => compute_d1(&f, self.eta),
            _ => ab_weights(&f, self.eta, Weighting::Majorizer),
        };
        scale_columns(x, &w)
    }

    /// Diagonal weights of the approximate Hessian at the expansion point.
    pub fn weights(&self) -> Vec<f64> {
        match self.factor {
            Factor::C => compute_d1(self.at, self.eta),
            _ => ab_weights(self.at, self.eta, self.weighting),
        }
    }

    /// `MᵀM + λ diag(w)`; the approximate Hessian is `I ⊗` this matrix.
    pub fn hessian_block(&self) -> DenseMatrix {
        let mut g = self.design.t_matmul(&self.design).expect("shapes");
        add_weighted_diagonal(&mut g, &self.weights(), self.lambda);
        g
    }

    /// Quadratic surrogate `g(X) = f(X_k) + tr((X−X_k)ᵀ∇f(X_k)) + ½ vec(X−X_k)ᵀ H̄ vec(X−X_k)`.
    pub fn surrogate(&self, x: &DenseMatrix) -> f64 {
        let x0 = self.expansion_point();
        let delta = x.sub(&x0).expect("shapes");
        let grad = self.gradient(&x0);
        let quad = delta.matmul(&self.hessian_block()).expect("shapes").dot(&delta);
        self.value(&x0) + grad.dot(&delta) + 0.5 * quad
    }

    /// Minimizer of [`BlockProblem::surrogate`]: `X_k − ∇f(X_k) H⁻¹` with `H` the Hessian block.
    pub fn surrogate_minimizer(&self) -> Result<DenseMatrix> {
        let x0 = self.expansion_point();
        let step = solve_spd_right(&self.gradient(&x0), &self.hessian_block())?;
        x0.sub(&step)
    }

    /// Closed-form update from the explicit design matrix.
    pub fn closed_form_update(&self) -> Result<DenseMatrix> {
        regularized_ls(&self.unfolding, &self.design, &self.weights(), self.lambda)
    }

    /// Reweighted quadratic `½‖Y_(n)ᵀ − M Xᵀ‖² + (λ/2) Σ_c w_c‖x_c‖² + const`, with the constant
    /// chosen so that it equals `f_X` at the expansion point. With [`Weighting::Majorizer`] this
    /// is the hierarchical majorizer of the objective; see [`BlockProblem::hierarchical_majorizer`].
    pub fn reweighted_objective(&self, x: &DenseMatrix) -> f64 {
        let w = self.weights();
        let x0 = self.expansion_point();
        let resid = self.unfolding.sub(&x.matmul_t(&self.design).expect("shapes")).expect("shapes");
        let penalty = |m: &DenseMatrix| -> f64 { (0..m.cols()).map(|c| w[c] * m.column_norm_sq(c)).sum() };
        let constant = self.at.regularizer_value(self.eta) - 0.5 * penalty(&x0);
        0.5 * resid.frobenius_norm_sq() + self.lambda * (0.5 * penalty(x) + constant)
    }

    /// Analytic gradient of [`BlockProblem::reweighted_objective`]:
    /// `−(Y_(n) − X Mᵀ) M + λ X diag(w)`.
    pub fn reweighted_gradient(&self, x: &DenseMatrix) -> DenseMatrix {
        let resid = x.matmul_t(&self.design).and_then(|xm| xm.sub(&self.unfolding)).expect("shapes");
        let data = resid.matmul(&self.design).expect("shapes");
        data.add(&scale_columns(x, &self.weights()).scale(self.lambda)).expect("shapes")
    }

    /// The two-level bound of the regularizer, written out term by term:
    /// `√u ≤ (u + u₀)/(2√u₀)` on the outer root and Cauchy-Schwarz
    /// `(Σ_l t_l)² ≤ T₀ Σ_l t_l²/t_l₀` on the inner sum. Returns the data fit plus `λ` times the
    /// bound; equals [`BlockProblem::reweighted_objective`] under [`Weighting::Majorizer`].
    pub fn hierarchical_majorizer(&self, x: &DenseMatrix) -> f64 {
        let eta2 = self.eta * self.eta;
        let f = self.substitute(x);
        let t0 = block_sums(self.at, self.eta);
        let d1 = compute_d1(self.at, self.eta);
        let resid = self.unfolding.sub(&x.matmul_t(&self.design).expect("shapes")).expect("shapes");
        let mut bound = 0.0;
        for r in 0..f.num_blocks() {
            let s0 = 1.0 / d1[r];
            let (ar0, br0) = (&self.at.a_blocks()[r], &self.at.b_blocks()[r]);
            let (ar, br) = (&f.a_blocks()[r], &f.b_blocks()[r]);
            let inner_sq = match self.factor {
                Factor::C => t0[r] * t0[r],
                _ => {
                    let weighted: f64 = (0..ar.cols())
                        .map(|l| {
                            let tl0 = (ar0.column_norm_sq(l) + br0.column_norm_sq(l) + eta2).sqrt();
                            (ar.column_norm_sq(l) + br.column_norm_sq(l) + eta2) / tl0
                        })
                        .sum();
                    t0[r] * weighted
                }
            };
            let u = inner_sq + f.c().column_norm_sq(r) + eta2;
            bound += (u + s0 * s0) / (2.0 * s0);
        }
        0.5 * resid.frobenius_norm_sq() + self.lambda * bound
    }

    /// Smallest eigenvalue of `H̄ − H`, where `H̄ = I ⊗ (MᵀM + λ diag(w))` and `H` is the true
    /// Hessian of `f_X` at the expansion point. The data-fit Hessian `I ⊗ MᵀM` is exact; the
    /// regularizer Hessian comes from central differences of its analytic gradient.
    /// Only for small problems (`rows·columns ≤ 64`).
    pub fn hessian_gap_min_eig(&self) -> Result<f64> {
        let x0 = self.expansion_point();
        let (nr, nc) = x0.shape();
        let n = nr * nc;
        if n > 64 {
            return Err(usage(format!("Hessian gap check is limited to 64 unknowns, got {n}")));
        }
        let w = self.weights();
        let mut h_reg = DenseMatrix::zeros(n, n);
        let h = 1e-6;
        for p in 0..n {
            let step = h * x0.as_slice()[p].abs().max(1.0);
            let mut plus = x0.clone();
            plus.as_mut_slice()[p] += step;
            let mut minus = x0.clone();
            minus.as_mut_slice()[p] -= step;
            let gp = self.regularizer_gradient(&plus);
            let gm = self.regularizer_gradient(&minus);
            for q in 0..n {
                h_reg[(q, p)] = (gp.as_slice()[q] - gm.as_slice()[q]) / (2.0 * step);
            }
        }
        // vec is row-major: unknown p = row·nc + col; H̄ − H = λ(I ⊗ diag(w) − H_reg)
        let gap = DenseMatrix::from_fn(n, n, |p, q| {
            let diag = if p == q { w[p % nc] } else { 0.0 };
            self.lambda * (diag - h_reg[(p, q)])
        });
        Ok(symmetric_eigenvalues(&gap)?[0])
    }
}

/// Surrogate `g_A(A | A_k, B_k, C_k)`.
pub fn surrogate_ga(
    a: &DenseMatrix,
    at: &BtdFactors,
    y: &DenseTensor3,
    lambda: f64,
    eta: f64,
    weighting: Weighting,
) -> Result<f64> {
    Ok(BlockProblem::new(y, at, Factor::A, lambda, eta, weighting)?.surrogate(a))
}

/// Smallest eigenvalue of `H̄_A − H_A` at `at`.
pub fn hessian_gap_min_eig(
    at: &BtdFactors,
    y: &DenseTensor3,
    lambda: f64,
    eta: f64,
    weighting: Weighting,
) -> Result<f64> {
    BlockProblem::new(y, at, Factor::A, lambda, eta, weighting)?.hessian_gap_min_eig()
}

fn factor_matrix(f: &BtdFactors, factor: Factor) -> DenseMatrix {
    match factor {
        Factor::A => f.a_concat(),
        Factor::B => f.b_concat(),
        Factor::C => f.c().clone(),
    }
}

fn scale_columns(x: &DenseMatrix, w: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| x[(r, c)] * w[c])
}
