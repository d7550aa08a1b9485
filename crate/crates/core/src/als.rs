//! Unregularized alternating least squares with fixed ranks, the comparison baseline.
//!
//! Each step is a plain least squares solve on one unfolding. With overestimated `L_r` the
//! Gram matrices are singular, so the solves use the minimum-norm solution.

use std::time::Instant;

use crate::error::{usage, BtdError, Result};
use crate::hirls::{relative_difference, DataCache, Factor, Init, IterationRecord, SolverTrace, UpdateMode};
use crate::linalg::solve_psd_right_min_norm;
use crate::model::BtdFactors;
use crate::rng::SplitMix64;
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init: Init,
    pub update_mode: UpdateMode,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-5,
            seed: 0,
            init: Init::RandomGaussian,
            update_mode: UpdateMode::GaussSeidel,
        }
    }
}

/// Minimum-norm least squares update of one factor with the others taken from `f`.
pub fn als_update(cache: &DataCache, f: &BtdFactors, factor: Factor) -> Result<crate::DenseMatrix> {
    let ws = match factor {
        Factor::C => Vec::new(),
        _ => cache.contract_mode3(f.c()),
    };
    let (rhs, gram) = cache.normal_equations(f, factor, &ws)?;
    solve_psd_right_min_norm(&rhs, &gram)
}

/// One sweep over `A`, `B`, `C`.
pub fn als_iteration(cache: &DataCache, f: &BtdFactors, mode: UpdateMode) -> Result<BtdFactors> {
    let mut next = f.clone();
    match mode {
        UpdateMode::GaussSeidel => {
            let a = als_update(cache, &next, Factor::A)?;
            next.set_a_concat(&a);
            let b = als_update(cache, &next, Factor::B)?;
            next.set_b_concat(&b);
            let c = als_update(cache, &next, Factor::C)?;
            next.set_c(c);
        }
        UpdateMode::Simultaneous => {
            next.set_a_concat(&als_update(cache, f, Factor::A)?);
            next.set_b_concat(&als_update(cache, f, Factor::B)?);
            next.set_c(als_update(cache, f, Factor::C)?);
        }
    }
    Ok(next)
}

/// Runs ALS with the given block ranks until the relative change of `‖Y − X‖_F` drops below
/// `rel_tol` or `max_iters` sweeps are done.
pub fn run_als(y: &DenseTensor3, ranks: &[usize], cfg: &AlsConfig) -> Result<(BtdFactors, SolverTrace)> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(usage(format!("ALS needs positive block ranks, got {ranks:?}")));
    }
    if cfg.rel_tol.is_nan() || cfg.rel_tol <= 0.0 {
        return Err(usage("rel_tol must be positive"));
    }
    let mut f = match &cfg.init {
        Init::Provided(f0) => {
            if f0.dims() != y.dims() || f0.ranks() != ranks {
                return Err(usage("initial factors do not match the data dims and ranks"));
            }
            f0.clone()
        }
        Init::RandomGaussian => BtdFactors::random_gaussian(y.dims(), ranks, &mut SplitMix64::new(cfg.seed))?,
    };
    let cache = DataCache::new(y);
    let start = Instant::now();
    let (fit0, mut prev_err) = cache.fit(&f);
    let mut trace = SolverTrace { lambda: 0.0, initial_objective: fit0, records: Vec::new(), converged: false };
    for iter in 1..=cfg.max_iters {
        f = als_iteration(&cache, &f, cfg.update_mode)
            .map_err(|e| BtdError::Solver { iteration: iter, source: Box::new(e) })?;
        let (fit, err) = cache.fit(&f);
        let rel_diff = relative_difference(prev_err, err);
        prev_err = err;
        trace.records.push(IterationRecord {
            iter,
            objective: fit,
            data_fit: fit,
            reg_value: 0.0,
            rel_diff,
            active_r: ranks.len(),
            active_l: ranks.to_vec(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if rel_diff < cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((f, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hirls::{data_fit, hirls_iteration, Weighting};
    use crate::synth::{add_noise_snr, gen_btd};

    #[test]
    fn noise_free_fit_from_perturbed_truth() {
        let (truth, y) = gen_btd((8, 7, 6), &[2, 2], 4).unwrap();
        let mut rng = SplitMix64::new(1);
        let mut init = truth.clone();
        let a = truth.a_concat();
        let noisy = crate::DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + 0.01 * rng.gaussian());
        init.set_a_concat(&noisy);
        let cfg = AlsConfig { init: Init::Provided(init), rel_tol: 1e-12, max_iters: 500, ..Default::default() };
        let (f, _) = run_als(&y, &[2, 2], &cfg).unwrap();
        assert!(data_fit(&f, &y) <= 1e-8 * y.frobenius_norm_sq());
    }

    #[test]
    fn half_steps_never_increase_fit() {
        let (_, x) = gen_btd((6, 5, 4), &[2, 1], 8).unwrap();
        let (y, _) = add_noise_snr(&x, 5.0, 3).unwrap();
        let cache = DataCache::new(&y);
        // overestimated ranks make the Grams singular
        let mut f = BtdFactors::random_gaussian((6, 5, 4), &[3, 3], &mut SplitMix64::new(2)).unwrap();
        let mut prev = data_fit(&f, &y);
        for _ in 0..30 {
            for factor in [Factor::A, Factor::B, Factor::C] {
                let x = als_update(&cache, &f, factor).unwrap();
                match factor {
                    Factor::A => f.set_a_concat(&x),
                    Factor::B => f.set_b_concat(&x),
                    Factor::C => f.set_c(x),
                }
                let fit = data_fit(&f, &y);
                assert!(fit <= prev * (1.0 + 1e-10) + 1e-12, "{fit} > {prev}");
                prev = fit;
            }
        }
    }

    #[test]
    fn rank_one_case_runs() {
        let (_, y) = gen_btd((5, 4, 3), &[1], 2).unwrap();
        let (f, trace) = run_als(&y, &[1], &AlsConfig { rel_tol: 1e-12, ..Default::default() }).unwrap();
        assert!(data_fit(&f, &y) < 1e-12 * y.frobenius_norm_sq());
        assert!(trace.iterations() <= 200);
        assert!(run_als(&y, &[], &AlsConfig::default()).is_err());
    }

    #[test]
    fn coincides_with_unregularized_hirls_step() {
        let (_, x) = gen_btd((6, 5, 4), &[2, 1], 5).unwrap();
        let (y, _) = add_noise_snr(&x, 10.0, 1).unwrap();
        let f = BtdFactors::random_gaussian((6, 5, 4), &[2, 1], &mut SplitMix64::new(3)).unwrap();
        let cache = DataCache::new(&y);
        let als = als_iteration(&cache, &f, UpdateMode::Simultaneous).unwrap();
        let hirls = hirls_iteration(&cache, &f, 0.0, 1e-8, UpdateMode::Simultaneous, Weighting::Majorizer).unwrap();
        for (p, q) in [(als.a_concat(), hirls.a_concat()), (als.b_concat(), hirls.b_concat())] {
            assert!(p.max_abs_diff(&q) < 1e-8 * (1.0 + q.frobenius_norm()));
        }
        assert!(als.c().max_abs_diff(hirls.c()) < 1e-8 * (1.0 + hirls.c().frobenius_norm()));
    }
}
