//! End-to-end behavior of the HIRLS solver and the ALS baseline.

use btd::als::{run_als, AlsConfig};
use btd::hirls::{
    compute_d1, objective, run_multistart, update_a, update_c, Init, PruneMode, Regularization, UpdateMode, Weighting,
};
use btd::metrics::nmse_blocks;
use btd::model::build_s;
use btd::products::khatri_rao_partitioned;
use btd::synth::{add_noise_snr, gen_btd};
use btd::{run_hirls, BtdError, BtdFactors, DenseTensor3, Mode, SolverConfig};

fn config(lambda: f64, r_ini: usize, l_ini: usize, seed: u64) -> SolverConfig {
    SolverConfig { r_ini, l_ini, regularization: Regularization::Lambda(lambda), seed, ..SolverConfig::default() }
}

#[test]
fn runs_are_reproducible() {
    let (_, x) = gen_btd((8, 7, 6), &[2, 3], 1).unwrap();
    let (y, _) = add_noise_snr(&x, 15.0, 2).unwrap();
    let cfg = config(1.0, 4, 4, 3);
    let (p, q) = (run_hirls(&y, &cfg).unwrap(), run_hirls(&y, &cfg).unwrap());
    assert_eq!(p.factors, q.factors);
    assert_eq!(p.ranks, q.ranks);
    assert_eq!(p.trace.objectives(), q.trace.objectives());
}

#[test]
fn trace_respects_iteration_cap() {
    let (_, x) = gen_btd((6, 6, 5), &[2, 2], 4).unwrap();
    let cfg = SolverConfig { max_iters: 7, rel_tol: 1e-300, ..config(0.5, 3, 3, 5) };
    let out = run_hirls(&x, &cfg).unwrap();
    assert_eq!(out.trace.iterations(), 7);
    assert!(!out.trace.converged);
    assert!(out.trace.records.iter().all(|r| r.objective.is_finite()));
}

#[test]
fn majorizer_weighting_descends() {
    for seed in 0..5 {
        let (_, x) = gen_btd((9, 8, 7), &[2, 3, 2], 10 + seed).unwrap();
        let (y, _) = add_noise_snr(&x, 10.0, 20 + seed).unwrap();
        let cfg = SolverConfig {
            weighting: Weighting::Majorizer,
            prune: PruneMode::Off,
            max_iters: 40,
            ..config(0.3, 5, 4, seed)
        };
        let objs = run_hirls(&y, &cfg).unwrap().trace.objectives();
        for w in objs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "objective rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn simultaneous_mode_runs() {
    let (_, x) = gen_btd((6, 6, 5), &[2, 1], 6).unwrap();
    let cfg = SolverConfig { update_mode: UpdateMode::Simultaneous, max_iters: 20, ..config(0.1, 3, 3, 7) };
    let out = run_hirls(&x, &cfg).unwrap();
    assert!(out.trace.iterations() <= 20);
    assert!(out.trace.records.iter().all(|r| r.objective.is_finite()));
}

#[test]
fn zero_data_drives_factors_to_zero() {
    let y = DenseTensor3::zeros((5, 4, 3));
    let cfg = SolverConfig { max_iters: 100, ..config(1.0, 3, 2, 8) };
    let out = run_hirls(&y, &cfg).unwrap();
    let x = out.factors.reconstruct();
    assert!(x.frobenius_norm() < 1e-6, "reconstruction norm {}", x.frobenius_norm());
    let last = out.trace.records.last().unwrap();
    assert!(last.data_fit < 1e-12);
    assert_eq!(out.ranks.r_est, 1);

    let floor = run_hirls(&y, &SolverConfig { max_iters: 5, ..SolverConfig::default() }).unwrap();
    assert_eq!(floor.trace.lambda, 1e-8);
}

#[test]
fn sparsity_recovers_noise_free_structure() {
    // λ = 100 is a fixed setting that works on this noise-free size; the σ̂ = 0 floor does not
    // remove the surplus blocks (see the README).
    let (truth, y) = gen_btd((20, 20, 15), &[2, 3, 4], 6000).unwrap();
    let cfg = SolverConfig { max_iters: 500, ..config(100.0, 6, 6, 60) };
    let out = run_multistart(&y, &cfg, 3, None).unwrap();
    assert_eq!(out.ranks.r_est, 3);
    assert_eq!(out.ranks.sorted_ranks(), vec![2, 3, 4]);
    let est = out.factors.select_blocks(&out.ranks.active_blocks).unwrap();
    assert!(nmse_blocks(&truth, &est).unwrap().0 < 1e-2);
}

#[test]
fn closed_form_updates_fit_noise_free_data() {
    let (f, y) = gen_btd((6, 5, 7), &[2, 2], 9).unwrap();
    let p = khatri_rao_partitioned(f.b_blocks(), &f.c_columns()).unwrap();
    let d = vec![1.0; f.total_rank()];
    let a = update_a(&y.unfold(Mode::One), &p, &d, 0.0).unwrap();
    let mut g = f.clone();
    g.set_a_concat(&a);
    assert!(g.reconstruct().sub(&y).unwrap().frobenius_norm() <= 1e-9);

    let big = update_a(&y.unfold(Mode::One), &p, &d, 1e14).unwrap();
    assert!(big.as_slice().iter().all(|v| v.abs() < 1e-8));

    let s = build_s(f.a_blocks(), f.b_blocks()).unwrap();
    let d1 = compute_d1(&f, 1e-8);
    let c = update_c(&y.unfold(Mode::Three), &s, &d1, 0.0).unwrap();
    assert!(c.max_abs_diff(f.c()) < 1e-9);
}

#[test]
fn als_fits_noise_free_data_from_nearby_start() {
    let (f, y) = gen_btd((7, 6, 5), &[2, 3], 11).unwrap();
    let (noise, _) = gen_btd((7, 6, 5), &[2, 3], 12).unwrap();
    let start = BtdFactors::new(
        f.a_blocks().iter().zip(noise.a_blocks()).map(|(a, e)| a.add(&e.scale(1e-2)).unwrap()).collect(),
        f.b_blocks().to_vec(),
        f.c().add(&noise.c().scale(1e-2)).unwrap(),
    )
    .unwrap();
    let cfg = AlsConfig { init: Init::Provided(start), rel_tol: 1e-14, max_iters: 500, ..AlsConfig::default() };
    let (est, trace) = run_als(&y, &[2, 3], &cfg).unwrap();
    let fit = 0.5 * est.reconstruct().distance_sq(&y).unwrap();
    assert!(fit <= 1e-8 * y.frobenius_norm_sq(), "data fit {fit}");
    assert!(trace.final_data_fit() <= 1e-8 * y.frobenius_norm_sq());
}

#[test]
fn als_with_one_rank_one_block_is_rank_one_fit() {
    let (_, y) = gen_btd((5, 4, 3), &[1], 13).unwrap();
    let (est, _) = run_als(&y, &[1], &AlsConfig { rel_tol: 1e-14, ..AlsConfig::default() }).unwrap();
    assert!(est.reconstruct().max_abs_diff(&y) < 1e-8);
}

#[test]
fn objective_splits_into_fit_and_penalty() {
    let (f, y) = gen_btd((4, 4, 4), &[1, 2], 14).unwrap();
    let z = BtdFactors::zeros((4, 4, 4), &[1, 2]).unwrap();
    let eta = 1e-3;
    assert!((objective(&f, &y, 2.0, eta) - 2.0 * f.regularizer_value(eta)).abs() < 1e-9);
    let expect = 0.5 * y.frobenius_norm_sq() + 3.0 * z.regularizer_value(eta);
    assert!((objective(&z, &y, 3.0, eta) - expect).abs() < 1e-12);
}

#[test]
fn invalid_settings_are_usage_errors() {
    let y = DenseTensor3::zeros((3, 3, 3));
    let bad = [
        SolverConfig { r_ini: 0, ..SolverConfig::default() },
        SolverConfig { eta: 0.0, ..SolverConfig::default() },
        SolverConfig { rel_tol: 0.0, ..SolverConfig::default() },
        SolverConfig { block_tol: 1.0, ..SolverConfig::default() },
        SolverConfig { init: Init::Provided(BtdFactors::zeros((2, 3, 3), &[1]).unwrap()), ..SolverConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(run_hirls(&y, &cfg), Err(BtdError::Usage(_))), "{cfg:?}");
    }
    assert!(matches!(run_multistart(&y, &SolverConfig::default(), 0, None), Err(BtdError::Usage(_))));
}
