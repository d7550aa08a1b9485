//! Experiment drivers: NMSE-vs-SNR tables, rank-recovery frequencies, convergence traces and
//! denoising. Trials run in parallel; each owns its generators (seeded from the experiment
//! seed and the trial coordinates) and results are gathered in trial order, so outputs do not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::als::{run_als, AlsConfig};
use crate::error::{usage, Result};
use crate::hirls::{run_hirls_observed, run_multistart, Regularization, SolverConfig, SolverOutput};
use crate::metrics::nmse_blocks;
use crate::model::BtdFactors;
use crate::rng::SplitMix64;
use crate::synth::{add_noise_snr, gen_btd, random_lr};
use crate::tensor::{DenseTensor3, Dims};

/// Seed of one random draw, keyed by purpose and trial coordinates.
pub fn stream_seed(seed: u64, purpose: u64, a: u64, b: u64) -> u64 {
    let key = purpose.wrapping_mul(0x1_0000_0001).wrapping_add(a << 20).wrapping_add(b);
    SplitMix64::derived(seed, key).next_u64()
}

const TRUTH: u64 = 1;
const RANKS: u64 = 2;
const NOISE: u64 = 3;
const SOLVER: u64 = 4;

/// How the true block ranks of each realization are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueRanks {
    Fixed(Vec<usize>),
    /// `R` blocks with `L_r` uniform on `lo..=hi`.
    Uniform {
        r: usize,
        lo: usize,
        hi: usize,
    },
}

impl TrueRanks {
    fn draw(&self, seed: u64) -> Result<Vec<usize>> {
        match self {
            TrueRanks::Fixed(l) => Ok(l.clone()),
            TrueRanks::Uniform { r, lo, hi } => random_lr(*r, *lo, *hi, seed),
        }
    }
}

/// One noisy realization with its ground truth.
#[derive(Debug, Clone)]
pub struct Realization {
    pub truth: BtdFactors,
    pub clean: DenseTensor3,
    pub noisy: DenseTensor3,
    pub sigma: f64,
}

/// Realization `trial` at SNR index `snr_index`. The true factors depend only on `trial`; the
/// noise depends on both.
pub fn realization(
    dims: Dims,
    ranks: &TrueRanks,
    snr_db: f64,
    seed: u64,
    snr_index: u64,
    trial: u64,
) -> Result<Realization> {
    let l = ranks.draw(stream_seed(seed, RANKS, 0, trial))?;
    let (truth, clean) = gen_btd(dims, &l, stream_seed(seed, TRUTH, 0, trial))?;
    let (noisy, sigma) = add_noise_snr(&clean, snr_db, stream_seed(seed, NOISE, snr_index, trial))?;
    Ok(Realization { truth, clean, noisy, sigma })
}

/// Solver settings for a realization: `λ` from the true noise level unless fixed in
/// `template`, start seed from the trial coordinates.
/// Solver settings for one trial. In noise-level mode the guess `σ̂` is `sigma_scale` times
/// the realized noise level.
fn trial_config(
    template: &SolverConfig,
    sigma: f64,
    sigma_scale: f64,
    seed: u64,
    snr_index: u64,
    trial: u64,
) -> SolverConfig {
    let regularization = match template.regularization {
        Regularization::NoiseLevel(_) => Regularization::NoiseLevel(sigma_scale * sigma),
        fixed => fixed,
    };
    SolverConfig { regularization, seed: stream_seed(seed, SOLVER, snr_index, trial), ..template.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrBenchSpec {
    pub dims: Dims,
    pub ranks: TrueRanks,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
    pub restarts: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Multiplies the realized noise level to form `σ̂` for the λ rule.
    pub sigma_scale: f64,
    /// `L` used for every block by the ALS baseline (which is given the true `R`); `None`
    /// skips the baseline.
    pub als_l: Option<usize>,
}

impl Default for SnrBenchSpec {
    fn default() -> Self {
        Self {
            dims: (60, 50, 55),
            ranks: TrueRanks::Uniform { r: 5, lo: 2, hi: 9 },
            snrs_db: vec![5.0, 10.0, 15.0, 20.0],
            trials: 10,
            restarts: 10,
            seed: 0,
            solver: SolverConfig::default(),
            sigma_scale: 1.0,
            als_l: Some(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub snr_db: f64,
    pub trial: usize,
    pub algo: &'static str,
    pub nmse: f64,
    pub wall_s: f64,
    /// Iterations of the selected run.
    pub iterations: usize,
    pub r_est: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrSummary {
    pub snr_db: f64,
    pub algo: &'static str,
    pub median_nmse: f64,
    pub mean_wall_s: f64,
    pub trials: usize,
}

/// Runs every (SNR, trial) pair. HIRLS keeps the best of `restarts` starts by block NMSE;
/// the ALS baseline does the same with the true `R` and `L = als_l` for every block. Wall
/// time covers all restarts of a trial.
pub fn bench_snr(spec: &SnrBenchSpec) -> Result<Vec<TrialResult>> {
    if spec.trials == 0 || spec.restarts == 0 || spec.snrs_db.is_empty() {
        return Err(usage("need at least one trial, one restart and one SNR"));
    }
    let jobs: Vec<(usize, usize)> =
        (0..spec.snrs_db.len()).flat_map(|s| (0..spec.trials).map(move |t| (s, t))).collect();
    let per_job: Vec<Vec<TrialResult>> = jobs.par_iter().map(|&(s, t)| snr_trial(spec, s, t)).collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

fn snr_trial(spec: &SnrBenchSpec, s: usize, t: usize) -> Result<Vec<TrialResult>> {
    let snr = spec.snrs_db[s];
    let real = realization(spec.dims, &spec.ranks, snr, spec.seed, s as u64, t as u64)?;
    let cfg = trial_config(&spec.solver, real.sigma, spec.sigma_scale, spec.seed, s as u64, t as u64);
    let mut out = Vec::with_capacity(2);

    let start = Instant::now();
    let best = run_multistart(&real.noisy, &cfg, spec.restarts, Some(&real.truth))?;
    out.push(TrialResult {
        snr_db: snr,
        trial: t,
        algo: "hirls",
        nmse: nmse_blocks(&real.truth, &best.factors)?.0,
        wall_s: start.elapsed().as_secs_f64(),
        iterations: best.trace.iterations(),
        r_est: best.ranks.r_est,
    });

    if let Some(l) = spec.als_l {
        let ranks = vec![l; real.truth.num_blocks()];
        let start = Instant::now();
        let mut best: Option<(f64, usize)> = None;
        for restart in 0..spec.restarts {
            let als_cfg = AlsConfig {
                max_iters: cfg.max_iters,
                rel_tol: cfg.rel_tol,
                seed: cfg.seed.wrapping_add(restart as u64),
                ..AlsConfig::default()
            };
            let (f, trace) = run_als(&real.noisy, &ranks, &als_cfg)?;
            let nmse = nmse_blocks(&real.truth, &f)?.0;
            if best.is_none_or(|(b, _)| nmse < b) {
                best = Some((nmse, trace.iterations()));
            }
        }
        let (nmse, iterations) = best.expect("restarts >= 1");
        out.push(TrialResult {
            snr_db: snr,
            trial: t,
            algo: "als",
            nmse,
            wall_s: start.elapsed().as_secs_f64(),
            iterations,
            r_est: ranks.len(),
        });
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median NMSE and mean wall time per (SNR, algorithm), in first-seen order.
pub fn summarize_snr(results: &[TrialResult]) -> Vec<SnrSummary> {
    let mut keys: Vec<(f64, &'static str)> = Vec::new();
    for r in results {
        if !keys.iter().any(|&(s, a)| s == r.snr_db && a == r.algo) {
            keys.push((r.snr_db, r.algo));
        }
    }
    keys.into_iter()
        .map(|(snr, algo)| {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.snr_db == snr && r.algo == algo).collect();
            let nmse: Vec<f64> = rows.iter().map(|r| r.nmse).collect();
            SnrSummary {
                snr_db: snr,
                algo,
                median_nmse: median(&nmse),
                mean_wall_s: rows.iter().map(|r| r.wall_s).sum::<f64>() / rows.len() as f64,
                trials: rows.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankBenchSpec {
    pub dims: Dims,
    pub true_ranks: Vec<usize>,
    pub snr_db: f64,
    pub trials: usize,
    pub restarts: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub sigma_scale: f64,
}

impl RankBenchSpec {
    /// Three blocks with `L = (8, 6, 4)` in an `18×18×10` tensor at 15 dB.
    pub fn scenario_one() -> Self {
        Self {
            dims: (18, 18, 10),
            true_ranks: vec![8, 6, 4],
            snr_db: 15.0,
            trials: 100,
            restarts: 1,
            seed: 0,
            solver: SolverConfig::default(),
            sigma_scale: 1.0,
        }
    }

    /// As [`RankBenchSpec::scenario_one`] with `L = (9, 7, 5)`, so that `Σ L_r > min(I, J)`.
    pub fn scenario_two() -> Self {
        Self { true_ranks: vec![9, 7, 5], ..Self::scenario_one() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTrial {
    pub trial: usize,
    pub r_est: usize,
    /// Estimated `L` of the block matched to each true block (0 when unmatched).
    pub l_matched: Vec<usize>,
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub trials: usize,
    /// Fraction of trials with `R_est = R_true`.
    pub r_success: f64,
    /// Per true block: estimated `L` → relative frequency.
    pub l_frequencies: Vec<BTreeMap<usize, f64>>,
    /// Per true block: most frequent estimate (smallest on ties).
    pub l_modes: Vec<usize>,
}

/// Rank-recovery frequencies. Estimated blocks are matched to true blocks by the optimal
/// block-NMSE assignment; the restart kept is the one with the lowest data fit.
pub fn bench_rank(spec: &RankBenchSpec) -> Result<Vec<RankTrial>> {
    if spec.trials == 0 || spec.restarts == 0 {
        return Err(usage("need at least one trial and one restart"));
    }
    let ranks = TrueRanks::Fixed(spec.true_ranks.clone());
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let real = realization(spec.dims, &ranks, spec.snr_db, spec.seed, 0, t as u64)?;
            let cfg = trial_config(&spec.solver, real.sigma, spec.sigma_scale, spec.seed, 0, t as u64);
            let out = run_multistart(&real.noisy, &cfg, spec.restarts, None)?;
            let active = out.factors.select_blocks(&out.ranks.active_blocks)?;
            let (nmse, assignment) = nmse_blocks(&real.truth, &active)?;
            let l_matched =
                (0..real.truth.num_blocks()).map(|r| assignment.col_of(r).map_or(0, |s| out.ranks.l_est[s])).collect();
            Ok(RankTrial { trial: t, r_est: out.ranks.r_est, l_matched, nmse })
        })
        .collect()
}

pub fn summarize_rank(trials: &[RankTrial], r_true: usize) -> RankSummary {
    let n = trials.len() as f64;
    let r_success = trials.iter().filter(|t| t.r_est == r_true).count() as f64 / n;
    let mut l_frequencies = vec![BTreeMap::new(); r_true];
    for t in trials {
        for (r, &l) in t.l_matched.iter().enumerate() {
            *l_frequencies[r].entry(l).or_insert(0.0) += 1.0 / n;
        }
    }
    let l_modes = l_frequencies
        .iter()
        .map(|freq| freq.iter().fold((0usize, -1.0f64), |best, (&l, &f)| if f > best.1 { (l, f) } else { best }).0)
        .collect();
    RankSummary { trials: trials.len(), r_success, l_frequencies, l_modes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub dims: Dims,
    pub ranks: TrueRanks,
    pub snr_db: f64,
    pub realizations: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub sigma_scale: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            dims: (60, 50, 55),
            ranks: TrueRanks::Uniform { r: 5, lo: 2, hi: 9 },
            snr_db: 10.0,
            realizations: 10,
            seed: 0,
            solver: SolverConfig::default(),
            sigma_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRun {
    pub realization: usize,
    /// Block NMSE after every iteration.
    pub nmse: Vec<f64>,
    pub output_trace: crate::hirls::SolverTrace,
}

impl TraceRun {
    /// First iteration at which the relative change dropped below `rel_tol`.
    pub fn stop_iteration(&self, rel_tol: f64) -> Option<usize> {
        self.output_trace.stop_iteration(rel_tol)
    }
}

/// One single-start run per realization, recording the block NMSE after each iteration.
pub fn trace_experiment(spec: &TraceSpec) -> Result<Vec<TraceRun>> {
    if spec.realizations == 0 {
        return Err(usage("need at least one realization"));
    }
    (0..spec.realizations)
        .into_par_iter()
        .map(|t| {
            let real = realization(spec.dims, &spec.ranks, spec.snr_db, spec.seed, 0, t as u64)?;
            let cfg = trial_config(&spec.solver, real.sigma, spec.sigma_scale, spec.seed, 0, t as u64);
            let mut nmse = Vec::new();
            let mut failure = None;
            let out = run_hirls_observed(&real.noisy, &cfg, |_, f| match nmse_blocks(&real.truth, f) {
                Ok((v, _)) => nmse.push(v),
                Err(e) => failure = Some(e),
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(TraceRun { realization: t, nmse, output_trace: out.trace })
        })
        .collect()
}

/// Low-rank approximation of a noisy cube: the reconstruction of the HIRLS factors.
pub fn denoise(noisy: &DenseTensor3, cfg: &SolverConfig, restarts: usize) -> Result<(DenseTensor3, SolverOutput)> {
    let out = run_multistart(noisy, cfg, restarts, None)?;
    Ok((out.factors.reconstruct(), out))
}

/// Noise standard deviation estimate `median|d| / (0.6745·√2)` over the differences `d` of
/// neighbouring entries along the second mode.
pub fn estimate_noise_sigma(y: &DenseTensor3) -> f64 {
    let (ni, nj, nk) = y.dims();
    if nj < 2 {
        return 0.0;
    }
    let mut d = Vec::with_capacity(ni * (nj - 1) * nk);
    for i in 0..ni {
        for j in 0..nj - 1 {
            for k in 0..nk {
                d.push((y[(i, j + 1, k)] - y[(i, j, k)]).abs());
            }
        }
    }
    median(&d) / (0.6745 * std::f64::consts::SQRT_2)
}
