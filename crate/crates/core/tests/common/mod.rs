//! Random sCSI scenarios shared by the integration tests and the acceptance
//! harness.

#![allow(dead_code)]

use msprecode::channel::{mean_phase_factor, ArrayGeometry, LinkStat, ScenarioScsi};
use msprecode::rng::rng_from_seed;
use rand::Rng;

/// Link statistics with κ drawn log-uniformly in `[kappa_lo, kappa_hi]`
/// (κ = 0 allowed when `kappa_lo` is 0) and ς² uniform in `[0, 0.6)`.
pub fn random_stats<R: Rng>(rng: &mut R, n: usize, kappa_lo: f64, kappa_hi: f64) -> Vec<LinkStat> {
    (0..n)
        .map(|_| {
            let var = rng.random_range(0.0..0.6);
            let kappa = if kappa_lo <= 0.0 && rng.random_bool(0.1) {
                0.0
            } else {
                let lo = kappa_lo.max(1e-3).log10();
                10f64.powf(rng.random_range(lo..=kappa_hi.log10()))
            };
            LinkStat {
                gamma: rng.random_range(0.3..2.0),
                kappa,
                theta_x: rng.random_range(-3.0..3.0),
                theta_y: rng.random_range(0.3..2.8),
                mean_phase: mean_phase_factor(var).unwrap(),
                phase_var: var,
            }
        })
        .collect()
}

/// `K` users and `S` satellites with unit budgets per satellite and noise
/// set so that `γP_k/σ²` is about `snr_db` for an average link.
pub fn random_scenario(seed: u64, k: usize, s: usize, n_v: usize, n_h: usize, snr_db: f64) -> ScenarioScsi {
    let mut rng = rng_from_seed(seed);
    let stats = random_stats(&mut rng, k * s, 0.1, 1e3);
    build(k, s, stats, n_v, n_h, snr_db)
}

pub fn build(k: usize, s: usize, stats: Vec<LinkStat>, n_v: usize, n_h: usize, snr_db: f64) -> ScenarioScsi {
    let p_k = s as f64 / k as f64;
    let noise = p_k / 10f64.powf(snr_db / 10.0);
    ScenarioScsi::new(
        k,
        s,
        stats,
        vec![noise; k],
        vec![1.0; k],
        vec![1.0; s],
        ArrayGeometry::new(n_v, n_h).unwrap(),
    )
    .unwrap()
}
