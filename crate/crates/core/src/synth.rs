//! Ground-truth block-term tensors and SNR-calibrated Gaussian noise.

use crate::error::{usage, Result};
use crate::model::BtdFactors;
use crate::rng::SplitMix64;
use crate::tensor::{DenseTensor3, Dims};

/// Factors with i.i.d. `N(0,1)` entries (drawn `A_1, B_1, A_2, …, C` from a generator seeded
/// with `seed`) and the clean tensor they reconstruct.
pub fn gen_btd(dims: Dims, ranks: &[usize], seed: u64) -> Result<(BtdFactors, DenseTensor3)> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(usage(format!("block ranks must be positive, got {ranks:?}")));
    }
    let f = BtdFactors::random_gaussian(dims, ranks, &mut SplitMix64::new(seed))?;
    let x = f.reconstruct();
    Ok((f, x))
}

/// `r` block ranks drawn uniformly from `lo..=hi`.
pub fn random_lr(r: usize, lo: usize, hi: usize, seed: u64) -> Result<Vec<usize>> {
    if lo == 0 || lo > hi {
        return Err(usage(format!("rank range {lo}..={hi} is empty or contains 0")));
    }
    let mut rng = SplitMix64::new(seed);
    Ok((0..r).map(|_| lo + rng.below((hi - lo + 1) as u64) as usize).collect())
}

/// The standard normal tensor `N` used by [`add_noise_snr`] for `seed`.
pub fn standard_noise(dims: Dims, seed: u64) -> DenseTensor3 {
    let mut rng = SplitMix64::new(seed);
    DenseTensor3::from_fn(dims, |_, _, _| rng.gaussian())
}

/// `Y = X + σN` with `σ = ‖X‖_F / (‖N‖_F · 10^{snr/20})`, so that
/// `10·log10(‖X‖²/(σ²‖N‖²))` equals `snr_db` for the realized noise. `snr_db = +∞` gives
/// `σ = 0`.
pub fn add_noise_snr(x: &DenseTensor3, snr_db: f64, seed: u64) -> Result<(DenseTensor3, f64)> {
    let x_norm = x.frobenius_norm();
    if x_norm == 0.0 {
        return Err(usage("cannot calibrate noise against an all-zero signal"));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(usage(format!("invalid SNR {snr_db} dB")));
    }
    if snr_db == f64::INFINITY {
        return Ok((x.clone(), 0.0));
    }
    let n = standard_noise(x.dims(), seed);
    let sigma = x_norm / (n.frobenius_norm() * 10f64.powf(snr_db / 20.0));
    Ok((x.add(&n.scale(sigma))?, sigma))
}

/// `10·log10(‖X‖² / (σ²‖N‖²))`.
pub fn snr_db(x: &DenseTensor3, noise: &DenseTensor3, sigma: f64) -> f64 {
    10.0 * (x.frobenius_norm_sq() / (sigma * sigma * noise.frobenius_norm_sq())).log10()
}
