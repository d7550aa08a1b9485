//! Property tests over random shapes, ranks and seeds.

use btd::io::{decode_m2, decode_t3, encode_m2, encode_t3, format_triplets, parse_triplets};
use btd::metrics::{linear_assignment, nmse_blocks, ssim};
use btd::rng::SplitMix64;
use btd::{BtdFactors, DenseMatrix, DenseTensor3, Mode};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=6, 1usize..=6, 1usize..=6)
}

fn ranks() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=3)
}

fn factors(d: (usize, usize, usize), l: &[usize], seed: u64) -> BtdFactors {
    BtdFactors::random_gaussian(d, l, &mut SplitMix64::new(seed)).unwrap()
}

fn tensor(d: (usize, usize, usize), seed: u64) -> DenseTensor3 {
    let mut rng = SplitMix64::new(seed);
    DenseTensor3::from_fn(d, |_, _, _| rng.gaussian())
}

/// Appends a zero column to every block and `extra` all-zero blocks.
fn zero_padded(f: &BtdFactors, extra: usize) -> BtdFactors {
    let (i, j, k) = f.dims();
    let pad = |m: &DenseMatrix| DenseMatrix::hstack(&[m.clone(), DenseMatrix::zeros(m.rows(), 1)]).unwrap();
    let mut a: Vec<_> = f.a_blocks().iter().map(pad).collect();
    let mut b: Vec<_> = f.b_blocks().iter().map(pad).collect();
    for _ in 0..extra {
        a.push(DenseMatrix::zeros(i, 2));
        b.push(DenseMatrix::zeros(j, 2));
    }
    let c = DenseMatrix::hstack(&[f.c().clone(), DenseMatrix::zeros(k, extra)]).unwrap();
    BtdFactors::new(a, b, c).unwrap()
}

fn brute_force_assignment(c: &DenseMatrix) -> f64 {
    fn go(c: &DenseMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == c.rows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for col in 0..c.cols() {
            if !used[col] {
                used[col] = true;
                best = best.min(c[(row, col)] + go(c, row + 1, used));
                used[col] = false;
            }
        }
        best
    }
    let m = if c.rows() <= c.cols() { c.clone() } else { c.transpose() };
    go(&m, 0, &mut vec![false; m.cols()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_unfold_round_trip(d in dims(), seed in any::<u64>()) {
        let t = tensor(d, seed);
        for m in Mode::ALL {
            prop_assert_eq!(&DenseTensor3::fold(&t.unfold(m), m, d).unwrap(), &t);
        }
    }

    #[test]
    fn norm_is_homogeneous(d in dims(), seed in any::<u64>(), alpha in -10.0f64..10.0) {
        let t = tensor(d, seed);
        let lhs = t.scale(alpha).frobenius_norm();
        prop_assert!((lhs - alpha.abs() * t.frobenius_norm()).abs() <= 1e-12 * (1.0 + lhs));
    }

    #[test]
    fn three_reconstructions_agree(d in dims(), l in ranks(), seed in any::<u64>()) {
        let f = factors(d, &l, seed);
        let x = f.reconstruct();
        let scale = 1.0 + x.frobenius_norm();
        prop_assert!(f.reconstruct_mode1().max_abs_diff(&x) <= 1e-12 * scale);
        prop_assert!(f.reconstruct_mode2().max_abs_diff(&x) <= 1e-12 * scale);
    }

    #[test]
    fn reconstruction_ignores_block_order_and_scaling(
        d in dims(), l in ranks(), seed in any::<u64>(), alpha in 0.1f64..10.0, shift in 0usize..3,
    ) {
        let f = factors(d, &l, seed);
        let r = f.num_blocks();
        let order: Vec<usize> = (0..r).map(|q| (q + shift) % r).collect();
        let a: Vec<_> = order.iter().map(|&q| f.a_blocks()[q].scale(alpha)).collect();
        let b: Vec<_> = order.iter().map(|&q| f.b_blocks()[q].clone()).collect();
        let c: Vec<_> = order.iter().map(|&q| f.c_column(q).scale(1.0 / alpha)).collect();
        let g = BtdFactors::new(a, b, DenseMatrix::hstack(&c).unwrap()).unwrap();
        let x = f.reconstruct();
        prop_assert!(g.reconstruct().max_abs_diff(&x) <= 1e-12 * (1.0 + x.frobenius_norm()));

        let a2: Vec<_> = f.a_blocks().iter().map(|m| m.scale(alpha)).collect();
        let b2: Vec<_> = f.b_blocks().iter().map(|m| m.scale(1.0 / alpha)).collect();
        let h = BtdFactors::new(a2, b2, f.c().clone()).unwrap();
        prop_assert!(h.reconstruct().max_abs_diff(&x) <= 1e-12 * (1.0 + x.frobenius_norm()));
    }

    #[test]
    fn regularizer_grows_with_eta(d in dims(), l in ranks(), seed in any::<u64>(), e1 in 0.0f64..2.0, e2 in 0.0f64..2.0) {
        let f = factors(d, &l, seed);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(f.regularizer_value(lo) <= f.regularizer_value(hi));
    }

    #[test]
    fn zero_padding_is_not_counted(
        d in dims(), l in ranks(), seed in any::<u64>(), extra in 0usize..4, bt in 1e-6f64..0.99, ct in 1e-6f64..0.99,
    ) {
        let f = factors(d, &l, seed);
        let padded = zero_padded(&f, extra);
        let est = padded.count_effective_ranks(bt, ct);
        let full = f.count_effective_ranks(bt, ct);
        prop_assert_eq!(est.r_est, full.r_est);
        prop_assert_eq!(est.l_est, full.l_est);
    }

    #[test]
    fn pruning_only_removes(d in dims(), l in ranks(), seed in any::<u64>(), tol in 1e-3f64..0.9) {
        let f = zero_padded(&factors(d, &l, seed), 1);
        let pb = f.prune_blocks(tol);
        prop_assert!(pb.num_blocks() >= 1 && pb.num_blocks() <= f.num_blocks());
        let kept = f.count_effective_ranks(tol, 0.5).active_blocks;
        for (q, &r) in kept.iter().enumerate() {
            prop_assert_eq!(&pb.a_blocks()[q], &f.a_blocks()[r]);
            prop_assert_eq!(pb.c_column(q), f.c_column(r));
        }
        let pc = f.prune_columns(tol);
        prop_assert_eq!(pc.num_blocks(), f.num_blocks());
        for (before, after) in f.ranks().iter().zip(pc.ranks()) {
            prop_assert!(after >= 1 && after <= *before);
        }
        prop_assert_eq!(pc.c(), f.c());
    }

    #[test]
    fn assignment_is_optimal(rows in 1usize..=5, cols in 1usize..=5, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let c = DenseMatrix::from_fn(rows, cols, |_, _| (rng.below(20) as f64) - 5.0);
        let res = linear_assignment(&c);
        prop_assert_eq!(res.pairs.len(), rows.min(cols));
        let mut seen_r: Vec<_> = res.pairs.iter().map(|p| p.0).collect();
        let mut seen_c: Vec<_> = res.pairs.iter().map(|p| p.1).collect();
        seen_r.dedup();
        seen_c.sort_unstable();
        seen_c.dedup();
        prop_assert_eq!(seen_r.len(), res.pairs.len());
        prop_assert_eq!(seen_c.len(), res.pairs.len());
        let picked: f64 = res.pairs.iter().map(|&(r, col)| c[(r, col)]).sum();
        prop_assert_eq!(picked, res.total_cost);
        prop_assert_eq!(res.total_cost, brute_force_assignment(&c));
    }

    #[test]
    fn nmse_ignores_ambiguities(d in dims(), l in ranks(), seed in any::<u64>(), alpha in 0.25f64..4.0) {
        let f = factors(d, &l, seed);
        let r = f.num_blocks();
        let a: Vec<_> = (0..r).rev().map(|q| f.a_blocks()[q].scale(alpha)).collect();
        let b: Vec<_> = (0..r).rev().map(|q| f.b_blocks()[q].clone()).collect();
        let c: Vec<_> = (0..r).rev().map(|q| f.c_column(q).scale(1.0 / alpha)).collect();
        let g = BtdFactors::new(a, b, DenseMatrix::hstack(&c).unwrap()).unwrap();
        prop_assert!(nmse_blocks(&f, &g).unwrap().0 <= 1e-24);
        prop_assert_eq!(nmse_blocks(&f, &f).unwrap().0, 0.0);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(rows in 3usize..12, cols in 3usize..12, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let a = DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform());
        let b = DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform());
        let ab = ssim(&a, &b, 3, 1.0).unwrap();
        let ba = ssim(&b, &a, 3, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ssim(&a, &a, 3, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_formats_round_trip(d in dims(), seed in any::<u64>()) {
        let t = tensor(d, seed);
        prop_assert_eq!(&decode_t3(&encode_t3(&t)).unwrap(), &t);
        let m = t.unfold(Mode::Two);
        prop_assert_eq!(&decode_m2(&encode_m2(&m)).unwrap(), &m);
    }

    #[test]
    fn triplet_text_round_trips(d in dims(), seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let t = DenseTensor3::from_fn(d, |_, _, _| if rng.below(3) == 0 { rng.gaussian() } else { 0.0 });
        prop_assert_eq!(&parse_triplets(&format_triplets(&t)).unwrap(), &t);
    }
}
