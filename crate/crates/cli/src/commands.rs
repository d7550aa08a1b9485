use std::collections::BTreeSet;

use anyhow::{Context, Result};
use btd::als::{run_als, AlsConfig};
use btd::bench::{self, RankBenchSpec, SnrBenchSpec, TraceSpec, TrueRanks};
use btd::hirls::{run_multistart, PruneMode, Regularization, SolverConfig, UpdateMode, Weighting};
use btd::io::{read_tensor, write_factors, write_tensor};
use btd::metrics::band_ssim_curve;
use btd::synth::{add_noise_snr, gen_btd, random_lr};
use btd::{BtdError, Dims};

use crate::output::{join, prepare_dir, write_csv, write_solution, Meta};
use crate::{
    Algo, BenchRankArgs, BenchSnrArgs, DecomposeArgs, DenoiseArgs, Outcome, PruneArg, SolverArgs, SynthArgs, TraceArgs,
    UpdateModeArg, WeightingArg,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    BtdError::Usage(msg.into()).into()
}

fn dims3(v: &[usize]) -> Result<Dims> {
    match *v {
        [i, j, k] if i > 0 && j > 0 && k > 0 => Ok((i, j, k)),
        _ => Err(usage(format!("--dims needs three positive sizes, got {v:?}"))),
    }
}

fn l_range(v: &[usize]) -> Result<(usize, usize)> {
    match *v {
        [lo, hi] if 1 <= lo && lo <= hi => Ok((lo, hi)),
        _ => Err(usage(format!("--l-range needs `lo,hi` with 1 ≤ lo ≤ hi, got {v:?}"))),
    }
}

/// Applies the flags on top of `base`; returns the config and the restart count.
fn solver_config(a: &SolverArgs, base: SolverConfig, default_restarts: usize) -> Result<(SolverConfig, usize)> {
    let mut cfg = base;
    if let Some(l) = a.lambda {
        cfg.regularization = Regularization::Lambda(l);
    }
    if let Some(s) = a.sigma_hat {
        cfg.regularization = Regularization::NoiseLevel(s);
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.eta = a.eta.unwrap_or(cfg.eta);
    cfg.max_iters = a.max_iters.unwrap_or(cfg.max_iters);
    cfg.rel_tol = a.rel_tol.unwrap_or(cfg.rel_tol);
    cfg.r_ini = a.r_ini.unwrap_or(cfg.r_ini);
    cfg.l_ini = a.l_ini.unwrap_or(cfg.l_ini);
    cfg.block_tol = a.block_tol.unwrap_or(cfg.block_tol);
    cfg.col_tol = a.col_tol.unwrap_or(cfg.col_tol);
    if let Some(m) = a.update_mode {
        cfg.update_mode = match m {
            UpdateModeArg::GaussSeidel => UpdateMode::GaussSeidel,
            UpdateModeArg::Simultaneous => UpdateMode::Simultaneous,
        };
    }
    if let Some(p) = a.prune {
        cfg.prune = match p {
            PruneArg::Off => PruneMode::Off,
            PruneArg::Blocks => PruneMode::Blocks,
            PruneArg::BlocksColumns => PruneMode::BlocksAndColumns,
        };
    }
    if let Some(w) = a.weighting {
        cfg.weighting = match w {
            WeightingArg::Product => Weighting::Product,
            WeightingArg::Majorizer => Weighting::Majorizer,
        };
    }
    cfg.validate()?;
    let restarts = a.restarts.unwrap_or(default_restarts);
    if restarts == 0 {
        return Err(usage("--restarts must be at least 1"));
    }
    Ok((cfg, restarts))
}

/// Benchmarks take `σ̂` from each realization, so only a fixed `λ` may be given.
fn bench_solver_config(a: &SolverArgs, default_restarts: usize) -> Result<(SolverConfig, usize)> {
    if a.sigma_hat.is_some() {
        return Err(usage("benchmarks derive σ̂ from the realized noise; use --sigma-scale or --lambda"));
    }
    solver_config(a, SolverConfig::default(), default_restarts)
}

fn outcome(converged: bool) -> Outcome {
    if converged {
        Outcome::Done
    } else {
        Outcome::IterationCap
    }
}

pub fn decompose(a: DecomposeArgs) -> Result<Outcome> {
    let y = read_tensor(&a.tensor).with_context(|| format!("reading {}", a.tensor.display()))?;
    let dir = prepare_dir(a.output.out.as_ref())?;
    let (cfg, restarts) = solver_config(&a.solver, SolverConfig::default(), 1)?;
    let mut meta = Meta::new("decompose");
    meta.set("input", a.tensor.display()).set("dims", join(&[y.dims().0, y.dims().1, y.dims().2], " "));
    match a.algo {
        Algo::Hirls => {
            if a.r.is_some() || !a.l.is_empty() {
                return Err(usage("--R and --L apply to --algo als; HIRLS uses --r-ini and --l-ini"));
            }
            let out = run_multistart(&y, &cfg, restarts, None)?;
            let active = out.factors.select_blocks(&out.ranks.active_blocks)?.prune_columns(cfg.col_tol);
            meta.set("algo", "hirls").solver(&cfg, restarts).set("lambda_resolved", out.trace.lambda);
            meta.set("iterations", out.trace.iterations()).set("converged", out.trace.converged);
            write_solution(&dir, &active, &out.ranks, &out.trace)?;
            meta.write(&dir)?;
            println!("R_est = {}\nL_est = {}", out.ranks.r_est, join(&out.ranks.l_est, " "));
            Ok(outcome(out.trace.converged))
        }
        Algo::Als => {
            let r = a.r.ok_or_else(|| usage("--algo als needs --R"))?;
            let ranks = match a.l.len() {
                0 => return Err(usage("--algo als needs --L")),
                1 => vec![a.l[0]; r],
                n if n == r => a.l.clone(),
                n => return Err(usage(format!("--L has {n} values for --R {r}"))),
            };
            let mut best = None;
            for s in 0..restarts {
                let als_cfg = AlsConfig {
                    max_iters: cfg.max_iters,
                    rel_tol: cfg.rel_tol,
                    seed: cfg.seed.wrapping_add(s as u64),
                    update_mode: cfg.update_mode,
                    ..AlsConfig::default()
                };
                let (f, trace) = run_als(&y, &ranks, &als_cfg)?;
                if best
                    .as_ref()
                    .is_none_or(|(_, t): &(_, btd::SolverTrace)| trace.final_data_fit() < t.final_data_fit())
                {
                    best = Some((f, trace));
                }
            }
            let (f, trace) = best.expect("restarts >= 1");
            let est = btd::RankEstimate {
                r_est: r,
                l_est: ranks.clone(),
                active_blocks: (0..r).collect(),
                column_energies: f.column_energies(),
                c_energies: f.c_energies(),
            };
            meta.set("algo", "als").set("R", r).set("L", join(&ranks, ","));
            meta.set("max_iters", cfg.max_iters).set("rel_tol", cfg.rel_tol).set("seed", cfg.seed);
            meta.set("restarts", restarts).set("iterations", trace.iterations()).set("converged", trace.converged);
            write_solution(&dir, &f, &est, &trace)?;
            meta.write(&dir)?;
            Ok(outcome(trace.converged))
        }
    }
}

pub fn synth(a: SynthArgs) -> Result<Outcome> {
    let dims = dims3(&a.dims)?;
    let dir = prepare_dir(a.output.out.as_ref())?;
    let ranks = match (a.ranks.is_empty(), a.r) {
        (false, None) => a.ranks.clone(),
        (true, Some(r)) => {
            let (lo, hi) = l_range(&a.l_range)?;
            random_lr(r, lo, hi, bench::stream_seed(a.seed, 0, 0, 0))?
        }
        _ => return Err(usage("give either --ranks or --r")),
    };
    let (truth, clean) = gen_btd(dims, &ranks, a.seed)?;
    write_tensor(&dir.join("clean.t3"), &clean)?;
    write_factors(&dir.join("truth"), &truth)?;
    let mut meta = Meta::new("synth");
    meta.set("dims", join(&a.dims, ",")).set("ranks", join(&ranks, ",")).set("seed", a.seed);
    if let Some(snr) = a.snr {
        let (noisy, sigma) = add_noise_snr(&clean, snr, a.seed.wrapping_add(1))?;
        write_tensor(&dir.join("noisy.t3"), &noisy)?;
        meta.set("snr", snr).set("sigma", sigma);
    }
    meta.write(&dir)?;
    Ok(Outcome::Done)
}

pub fn bench_snr(a: BenchSnrArgs) -> Result<Outcome> {
    let dir = prepare_dir(a.output.out.as_ref())?;
    let (lo, hi) = l_range(&a.l_range)?;
    let (solver, restarts) = bench_solver_config(&a.solver, 10)?;
    let spec = SnrBenchSpec {
        dims: dims3(&a.dims)?,
        ranks: TrueRanks::Uniform { r: a.r, lo, hi },
        snrs_db: a.snrs.clone(),
        trials: a.trials,
        restarts,
        seed: solver.seed,
        solver: solver.clone(),
        sigma_scale: a.sigma_scale,
        als_l: (a.als_l > 0).then_some(a.als_l),
    };
    let results = bench::bench_snr(&spec)?;
    write_csv(
        &dir.join("results.csv"),
        &["snr_db", "trial", "algo", "nmse", "wall_s", "iterations", "r_est"],
        results.iter().map(|r| {
            vec![
                r.snr_db.to_string(),
                r.trial.to_string(),
                r.algo.into(),
                r.nmse.to_string(),
                r.wall_s.to_string(),
                r.iterations.to_string(),
                r.r_est.to_string(),
            ]
        }),
    )?;
    let summary = bench::summarize_snr(&results);
    write_csv(
        &dir.join("summary.csv"),
        &["snr_db", "algo", "median_nmse", "mean_wall_s", "trials"],
        summary.iter().map(|s| {
            vec![
                s.snr_db.to_string(),
                s.algo.into(),
                s.median_nmse.to_string(),
                s.mean_wall_s.to_string(),
                s.trials.to_string(),
            ]
        }),
    )?;
    for s in &summary {
        println!(
            "{:>6} dB  {:<5}  median NMSE {:.4e}  mean time {:.2} s",
            s.snr_db, s.algo, s.median_nmse, s.mean_wall_s
        );
    }
    let mut meta = Meta::new("bench-snr");
    meta.set("dims", join(&a.dims, ",")).set("r", a.r).set("l_range", join(&a.l_range, ","));
    meta.set("snrs", join(&a.snrs, ",")).set("trials", a.trials).set("als_l", a.als_l);
    meta.set("sigma_scale", a.sigma_scale).solver(&solver, restarts);
    meta.write(&dir)?;
    Ok(Outcome::Done)
}

pub fn bench_rank(a: BenchRankArgs) -> Result<Outcome> {
    let dir = prepare_dir(a.output.out.as_ref())?;
    let (solver, restarts) = bench_solver_config(&a.solver, 1)?;
    let base = if a.scenario == 1 { RankBenchSpec::scenario_one() } else { RankBenchSpec::scenario_two() };
    let true_ranks = if a.ranks.is_empty() { base.true_ranks.clone() } else { a.ranks.clone() };
    let spec = RankBenchSpec {
        dims: dims3(&a.dims)?,
        true_ranks: true_ranks.clone(),
        snr_db: a.snr,
        trials: a.trials,
        restarts,
        seed: solver.seed,
        solver: solver.clone(),
        sigma_scale: a.sigma_scale,
    };
    let trials = bench::bench_rank(&spec)?;
    let summary = bench::summarize_rank(&trials, true_ranks.len());
    let mut header = vec!["trial".to_string(), "r_est".into(), "nmse".into()];
    header.extend((1..=true_ranks.len()).map(|r| format!("L_{r}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("trials.csv"),
        &header_refs,
        trials.iter().map(|t| {
            let mut row = vec![t.trial.to_string(), t.r_est.to_string(), t.nmse.to_string()];
            row.extend(t.l_matched.iter().map(usize::to_string));
            row
        }),
    )?;
    write_csv(
        &dir.join("frequencies.csv"),
        &["block", "true_L", "est_L", "frequency"],
        summary.l_frequencies.iter().enumerate().flat_map(|(r, freq)| {
            let truth = true_ranks[r];
            freq.iter().map(move |(l, f)| vec![(r + 1).to_string(), truth.to_string(), l.to_string(), f.to_string()])
        }),
    )?;
    let r_hist: BTreeSet<usize> = trials.iter().map(|t| t.r_est).collect();
    write_csv(
        &dir.join("r_frequencies.csv"),
        &["r_est", "frequency"],
        r_hist.iter().map(|&r| {
            let n = trials.iter().filter(|t| t.r_est == r).count();
            vec![r.to_string(), (n as f64 / trials.len() as f64).to_string()]
        }),
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &["true_L", "trials", "r_success", "modal_L"],
        [vec![
            join(&true_ranks, " "),
            summary.trials.to_string(),
            summary.r_success.to_string(),
            join(&summary.l_modes, " "),
        ]],
    )?;
    println!("R success {:.1}%  modal L {:?}  (true {:?})", 100.0 * summary.r_success, summary.l_modes, true_ranks);
    let mut meta = Meta::new("bench-rank");
    meta.set("scenario", a.scenario).set("ranks", join(&true_ranks, ",")).set("dims", join(&a.dims, ","));
    meta.set("snr", a.snr).set("trials", a.trials).set("sigma_scale", a.sigma_scale).solver(&solver, restarts);
    meta.write(&dir)?;
    Ok(Outcome::Done)
}

pub fn trace(a: TraceArgs) -> Result<Outcome> {
    let dir = prepare_dir(a.output.out.as_ref())?;
    let (lo, hi) = l_range(&a.l_range)?;
    let (solver, restarts) = bench_solver_config(&a.solver, 1)?;
    if restarts != 1 {
        return Err(usage("trace records single runs; --restarts must be 1"));
    }
    let spec = TraceSpec {
        dims: dims3(&a.dims)?,
        ranks: TrueRanks::Uniform { r: a.r, lo, hi },
        snr_db: a.snr,
        realizations: a.realizations,
        seed: solver.seed,
        solver: solver.clone(),
        sigma_scale: a.sigma_scale,
    };
    let runs = bench::trace_experiment(&spec)?;
    let rows = runs.iter().flat_map(|run| {
        run.output_trace.records.iter().zip(&run.nmse).map(move |(rec, nmse)| {
            vec![
                run.realization.to_string(),
                rec.iter.to_string(),
                nmse.to_string(),
                rec.objective.to_string(),
                rec.data_fit.to_string(),
                rec.rel_diff.to_string(),
                rec.active_r.to_string(),
            ]
        })
    });
    write_csv(
        &dir.join("trace.csv"),
        &["realization", "iter", "nmse", "objective", "data_fit", "rel_diff", "active_R"],
        rows,
    )?;
    write_csv(
        &dir.join("stops.csv"),
        &["realization", "iterations", "stop_iteration", "final_nmse"],
        runs.iter().map(|run| {
            vec![
                run.realization.to_string(),
                run.output_trace.iterations().to_string(),
                run.stop_iteration(solver.rel_tol).map_or(String::new(), |i| i.to_string()),
                run.nmse.last().map_or(String::new(), f64::to_string),
            ]
        }),
    )?;
    let mut meta = Meta::new("trace");
    meta.set("dims", join(&a.dims, ",")).set("r", a.r).set("l_range", join(&a.l_range, ","));
    meta.set("snr", a.snr).set("realizations", a.realizations).set("sigma_scale", a.sigma_scale);
    meta.solver(&solver, restarts).write(&dir)?;
    Ok(Outcome::Done)
}

pub fn denoise(a: DenoiseArgs) -> Result<Outcome> {
    if a.ssim && a.reference.is_none() {
        return Err(usage("--ssim needs --reference CLEAN_CUBE"));
    }
    let noisy = read_tensor(&a.cube).with_context(|| format!("reading {}", a.cube.display()))?;
    if noisy.dims().2 < 2 {
        return Err(usage("denoising needs at least two bands (K ≥ 2)"));
    }
    let reference = match &a.reference {
        Some(p) => Some(read_tensor(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let dir = prepare_dir(a.output.out.as_ref())?;
    let base = SolverConfig { r_ini: 50, l_ini: 10, ..SolverConfig::default() };
    let (mut cfg, restarts) = solver_config(&a.solver, base, 1)?;
    let mut meta = Meta::new("denoise");
    meta.set("input", a.cube.display());
    if a.solver.lambda.is_none() && a.solver.sigma_hat.is_none() {
        let sigma = bench::estimate_noise_sigma(&noisy);
        cfg.regularization = Regularization::NoiseLevel(sigma);
        meta.set("sigma_hat_source", "estimated");
    }
    let (denoised, out) = bench::denoise(&noisy, &cfg, restarts)?;
    write_tensor(&dir.join("denoised.t3"), &denoised)?;
    let active = out.factors.select_blocks(&out.ranks.active_blocks)?.prune_columns(cfg.col_tol);
    write_solution(&dir, &active, &out.ranks, &out.trace)?;
    if let Some(clean) = &reference {
        let before = band_ssim_curve(clean, &noisy, a.ssim_window, None)?;
        let after = band_ssim_curve(clean, &denoised, a.ssim_window, None)?;
        write_csv(
            &dir.join("ssim.csv"),
            &["band", "ssim_noisy", "ssim_denoised"],
            before.iter().zip(&after).map(|((k, s0), (_, s1))| vec![k.to_string(), s0.to_string(), s1.to_string()]),
        )?;
        let improved = before.iter().zip(&after).filter(|((_, s0), (_, s1))| s1 > s0).count();
        println!("SSIM improved on {improved}/{} bands", before.len());
        meta.set("reference", a.reference.as_ref().expect("reference given").display());
    }
    meta.solver(&cfg, restarts).set("lambda_resolved", out.trace.lambda);
    meta.set("iterations", out.trace.iterations()).set("converged", out.trace.converged);
    meta.write(&dir)?;
    println!("R_est = {}\nL_est = {}", out.ranks.r_est, join(&out.ranks.l_est, " "));
    Ok(outcome(out.trace.converged))
}
