//! Generates a noisy block-term tensor and estimates its block count and ranks.
//!
//! `cargo run --release --example recover -- [snr_db] [seed]`

use btd::hirls::{run_multistart, Regularization};
use btd::metrics::nmse_blocks;
use btd::synth::{add_noise_snr, gen_btd};
use btd::SolverConfig;

fn main() -> btd::Result<()> {
    let mut args = std::env::args().skip(1);
    let snr: f64 = args.next().map_or(15.0, |s| s.parse().expect("snr in dB"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("integer seed"));

    let (truth, clean) = gen_btd((18, 18, 10), &[4, 3, 2], seed)?;
    let (noisy, sigma) = add_noise_snr(&clean, snr, seed + 1)?;
    let cfg = SolverConfig {
        r_ini: 6,
        l_ini: 6,
        regularization: Regularization::NoiseLevel(sigma),
        seed,
        ..SolverConfig::default()
    };
    let out = run_multistart(&noisy, &cfg, 5, None)?;
    let est = out.factors.select_blocks(&out.ranks.active_blocks)?;
    println!("true L = [4, 3, 2], estimated R = {}, L = {:?}", out.ranks.r_est, out.ranks.l_est);
    println!("block NMSE = {:.3e} after {} iterations", nmse_blocks(&truth, &est)?.0, out.trace.iterations());
    Ok(())
}
