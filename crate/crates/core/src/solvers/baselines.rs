//! Reference precoders built on mean channels only.
//!
//! The single-satellite schemes let the master satellite (index 0, closest
//! to the region center) serve every user; the separate scheme runs one
//! independent WMMSE per satellite, each with its own budget.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::ScenarioScsi;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_solve, CMatrix, CVector, C64};

use super::{ConvergenceTrace, IterationRecord, PrecoderSolution, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Regularized channel inversion from the master satellite.
    SsM,
    /// WMMSE from the master satellite.
    SsWm,
    /// Independent per-satellite WMMSE.
    MsSepWm,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::SsM, Baseline::SsWm, Baseline::MsSepWm];

    pub fn label(self) -> &'static str {
        match self {
            Baseline::SsM => "SS-M",
            Baseline::SsWm => "SS-WM",
            Baseline::MsSepWm => "MS-SepWM",
        }
    }
}

/// Result of a WMMSE run on one group of mean channels.
#[derive(Debug, Clone)]
pub struct GroupWmmse {
    /// `N × K`, column `k` is user `k`'s precoder.
    pub w: CMatrix,
    pub iterations: usize,
    /// `Σβ(1 + log₂ e)` at each iterate, starting with the initial point.
    pub objective: Vec<f64>,
    /// Group rate `Σβ log₂(1/e)` at each iterate.
    pub rate: Vec<f64>,
    pub linear_solves: usize,
}

/// `W = Hᴴ(HHᴴ + αI)⁻¹` with `α = Kσ̄²/P`, scaled to `‖W‖² = P`.
///
/// `h` is `K × N` with rows `h_kᵀ`. A zero channel gives a zero precoder.
pub fn rzf(h: &CMatrix, sigma2: &[f64], power: f64, ridge_floor: f64) -> Result<CMatrix> {
    let k = h.nrows();
    if sigma2.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: sigma2.len() });
    }
    let mean_noise = sigma2.iter().sum::<f64>() / k as f64;
    let alpha = k as f64 * mean_noise / power;
    let mut gram = h * h.adjoint();
    for i in 0..k {
        gram[(i, i)] += C64::from(alpha);
    }
    let mut inv = CMatrix::zeros(k, k);
    for j in 0..k {
        let mut e = CVector::zeros(k);
        e[j] = C64::from(1.0);
        inv.set_column(j, &hermitian_solve(&gram, &e, ridge_floor)?);
    }
    let w = h.adjoint() * inv;
    Ok(scale_to(w, power))
}

fn scale_to(mut w: CMatrix, power: f64) -> CMatrix {
    let norm = w.norm_squared();
    if norm > 0.0 {
        w *= C64::from((power / norm).sqrt());
    }
    w
}

/// Receivers `a_k = (h_kᵀw_k)*/T_k` and MSEs `e_k = 1 − |h_kᵀw_k|²/T_k`.
fn receivers(h: &CMatrix, w: &CMatrix, sigma2: &[f64]) -> (Vec<C64>, Vec<f64>) {
    let hw = h * w;
    let k = h.nrows();
    let mut a = Vec::with_capacity(k);
    let mut e = Vec::with_capacity(k);
    for i in 0..k {
        let total: f64 = hw.row(i).iter().map(|x| x.norm_sqr()).sum::<f64>() + sigma2[i];
        let d = hw[(i, i)];
        a.push(d.conj() / total);
        // (I + σ²)/T, computed without cancellation
        let rest = total - d.norm_sqr();
        e.push((rest / total).max(f64::MIN_POSITIVE));
    }
    (a, e)
}

/// Exact minimizer of the weighted MSE over `‖W‖² ≤ P` for fixed receivers
/// and weights, with the multiplier found by bisection.
fn precoder_step(h: &CMatrix, a: &[C64], u: &[f64], beta: &[f64], power: f64) -> CMatrix {
    let (k, n) = h.shape();
    let mut g = h.clone();
    let mut x = h.adjoint();
    for i in 0..k {
        let c = beta[i] * u[i] * a[i].norm_sqr();
        g.row_mut(i).scale_mut(c.sqrt());
        let b = C64::from(beta[i] * u[i]) * a[i].conj();
        for r in 0..n {
            x[(r, i)] *= b;
        }
    }
    let svd = g.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let y = &v_t * &x;
    let keep: Vec<bool> = svd.singular_values.iter().map(|&s| s > 1e-12 * s_max && s > 0.0).collect();
    let row_energy: Vec<f64> = (0..y.nrows()).map(|r| y.row(r).norm_squared()).collect();
    let power_at = |mu: f64| -> f64 {
        (0..y.nrows())
            .filter(|&r| keep[r])
            .map(|r| row_energy[r] / (svd.singular_values[r].powi(2) + mu).powi(2))
            .sum()
    };
    let mu = if power_at(0.0) <= power {
        0.0
    } else {
        let total: f64 = row_energy.iter().sum();
        let (mut lo, mut hi) = (0.0, (total / power).sqrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if power_at(mid) > power {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    };
    let mut scaled = y.clone();
    for r in 0..y.nrows() {
        let f = if keep[r] { 1.0 / (svd.singular_values[r].powi(2) + mu) } else { 0.0 };
        scaled.row_mut(r).scale_mut(f);
    }
    v_t.adjoint() * scaled
}

fn weighted_log_mse(e: &[f64], beta: &[f64]) -> f64 {
    e.iter().zip(beta).map(|(e, b)| b * e.log2()).sum()
}

/// WMMSE on a single group of mean channels `h` (`K × N`, rows `h_kᵀ`).
///
/// Starts from RZF, alternates receiver, weight and precoder updates, and
/// stops once `Σβ log₂ e` improves by at most `chi` or after `i_max`
/// precoder updates. The output is scaled to use the full budget.
pub fn wmmse_single_group(
    h: &CMatrix,
    sigma2: &[f64],
    beta: &[f64],
    power: f64,
    chi: f64,
    i_max: usize,
    ridge_floor: f64,
) -> Result<GroupWmmse> {
    let k = h.nrows();
    if beta.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: beta.len() });
    }
    let beta_sum: f64 = beta.iter().sum();
    let mut w = rzf(h, sigma2, power, ridge_floor)?;
    let mut out = GroupWmmse {
        w: w.clone(),
        iterations: 0,
        objective: Vec::new(),
        rate: Vec::new(),
        linear_solves: 1,
    };
    if h.norm_squared() == 0.0 {
        out.objective.push(beta_sum);
        out.rate.push(0.0);
        return Ok(out);
    }
    let (mut a, mut e) = receivers(h, &w, sigma2);
    let push = |out: &mut GroupWmmse, e: &[f64]| {
        let l = weighted_log_mse(e, beta);
        out.objective.push(beta_sum + l);
        out.rate.push(-l);
    };
    push(&mut out, &e);
    for it in 1..=i_max {
        let u: Vec<f64> = e.iter().map(|e| 1.0 / e).collect();
        let w_new = precoder_step(h, &a, &u, beta, power);
        let (a_new, e_new) = receivers(h, &w_new, sigma2);
        out.linear_solves += 1;
        let gain = weighted_log_mse(&e, beta) - weighted_log_mse(&e_new, beta);
        w = w_new;
        a = a_new;
        e = e_new;
        out.iterations = it;
        push(&mut out, &e);
        if gain <= chi {
            break;
        }
    }
    out.w = scale_to(w, power);
    Ok(out)
}

/// Mean-channel rows of satellite `s` for all users.
fn satellite_rows(scsi: &ScenarioScsi, s: usize) -> CMatrix {
    let n_t = scsi.array.n_t();
    let mut h = CMatrix::zeros(scsi.num_users, n_t);
    for k in 0..scsi.num_users {
        let m = crate::channel::mean_channel(scsi.stat(k, s), &scsi.array);
        h.set_row(k, &m.transpose());
    }
    h
}

fn embed(sol: &mut PrecoderSolution, w: &CMatrix, s: usize, n_t: usize) {
    for k in 0..sol.num_users() {
        sol.w[k].rows_mut(s * n_t, n_t).copy_from(&w.column(k));
    }
}

fn finish(sol: &mut PrecoderSolution) {
    for k in 0..sol.num_users() {
        let p = sol.w[k].norm_squared();
        sol.per_user_power[k] = p;
        sol.inactive[k] = p == 0.0;
        sol.eta[k] = if p > 0.0 { 1.0 } else { 0.0 };
    }
}

/// Runs one baseline. Entries of non-serving satellites stay zero.
pub fn solve_baseline(scsi: &ScenarioScsi, cfg: &SolverConfig, which: Baseline) -> Result<(PrecoderSolution, ConvergenceTrace)> {
    cfg.validate()?;
    scsi.validate()?;
    let start = Instant::now();
    let n_t = scsi.array.n_t();
    let mut sol = PrecoderSolution::zeros(scsi.num_users, scsi.stacked_len());
    let mut trace = ConvergenceTrace::default();
    let sigma2 = &scsi.noise_power;
    let beta = &scsi.weights;
    let mut runs = Vec::new();
    match which {
        Baseline::SsM => {
            let w = rzf(&satellite_rows(scsi, 0), sigma2, scsi.power_budget[0], cfg.ridge_floor)?;
            embed(&mut sol, &w, 0, n_t);
            trace.linear_solves = 1;
        }
        Baseline::SsWm => {
            let h = satellite_rows(scsi, 0);
            let run = wmmse_single_group(&h, sigma2, beta, scsi.power_budget[0], cfg.chi, cfg.i_max1, cfg.ridge_floor)?;
            embed(&mut sol, &run.w, 0, n_t);
            runs.push(run);
        }
        Baseline::MsSepWm => {
            for s in 0..scsi.num_sats {
                let h = satellite_rows(scsi, s);
                let run = wmmse_single_group(&h, sigma2, beta, scsi.power_budget[s], cfg.chi, cfg.i_max1, cfg.ridge_floor)?;
                embed(&mut sol, &run.w, s, n_t);
                runs.push(run);
            }
        }
    }
    if !runs.is_empty() {
        trace.iterations = runs.iter().map(|r| r.iterations).max().unwrap_or(0);
        trace.linear_solves = runs.iter().map(|r| r.linear_solves).sum();
        // a single group keeps its own per-iterate surrogate
        if runs.len() == 1 {
            let r = &runs[0];
            trace.records = r
                .objective
                .iter()
                .zip(&r.rate)
                .enumerate()
                .map(|(i, (&objective, &rate))| IterationRecord {
                    iteration: i,
                    objective,
                    rate_ap1: rate,
                    rate_ap2: rate,
                    e_tilde: Vec::new(),
                })
                .collect();
        }
    }
    finish(&mut sol);
    trace.elapsed_secs = start.elapsed().as_secs_f64();
    Ok((sol, trace))
}

/// Runs every baseline, in [`Baseline::ALL`] order.
pub fn solve_baselines(scsi: &ScenarioScsi, cfg: &SolverConfig) -> Result<Vec<(Baseline, PrecoderSolution, ConvergenceTrace)>> {
    Baseline::ALL
        .iter()
        .map(|&b| solve_baseline(scsi, cfg, b).map(|(s, t)| (b, s, t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::solvers::test_support::random_scenario;
    use rand::Rng;

    fn random_h(seed: u64, k: usize, n: usize) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        CMatrix::from_fn(k, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn rzf_single_user_is_mrt() {
        let h = random_h(1, 1, 6);
        let w = rzf(&h, &[0.1], 2.0, 1e-12).unwrap();
        let mrt = h.adjoint();
        let cos = w.column(0).dotc(&mrt.column(0)).norm() / (w.norm() * mrt.norm());
        assert!((cos - 1.0).abs() < 1e-12);
        assert!((w.norm_squared() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rzf_high_snr_nulls_interference() {
        let h = random_h(2, 3, 8);
        let w = rzf(&h, &[1e-12; 3], 1.0, 1e-12).unwrap();
        let hw = &h * &w;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(hw[(i, j)].norm() < 1e-5 * hw[(i, i)].norm());
                }
            }
        }
    }

    #[test]
    fn zero_channel_gives_zero_precoder() {
        let h = CMatrix::zeros(2, 4);
        let run = wmmse_single_group(&h, &[0.1, 0.1], &[1.0, 1.0], 1.0, 1e-3, 300, 1e-12).unwrap();
        assert_eq!(run.w.norm(), 0.0);
        assert_eq!(run.iterations, 0);
    }

    #[test]
    fn wmmse_objective_non_increasing() {
        for seed in 0..10 {
            let h = random_h(10 + seed, 4, 6);
            let run = wmmse_single_group(&h, &[0.05; 4], &[1.0, 0.5, 2.0, 1.0], 1.0, 0.0, 200, 1e-12).unwrap();
            for pair in run.objective.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "{pair:?}");
            }
            assert!((run.w.norm_squared() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wmmse_beats_rzf_at_low_snr() {
        let h = random_h(3, 4, 4);
        let sigma = [1.0; 4];
        let run = wmmse_single_group(&h, &sigma, &[1.0; 4], 1.0, 1e-6, 300, 1e-12).unwrap();
        assert!(run.rate.last().unwrap() >= &(run.rate[0] - 1e-12));
    }

    #[test]
    fn precoder_step_meets_budget() {
        let h = random_h(4, 3, 5);
        let a = vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(1.0, 0.0)];
        let w = precoder_step(&h, &a, &[1.0, 2.0, 0.5], &[1.0; 3], 0.7);
        assert!(w.norm_squared() <= 0.7 * (1.0 + 1e-9));
    }

    #[test]
    fn baselines_fill_only_serving_entries() {
        let scsi = random_scenario(5, 3, 3, 2, 2, 10.0);
        let cfg = SolverConfig::default();
        let n_t = 4;
        for (b, sol, _) in solve_baselines(&scsi, &cfg).unwrap() {
            match b {
                Baseline::SsM | Baseline::SsWm => {
                    assert!((sol.satellite_power(0, n_t) - 1.0).abs() < 1e-9);
                    assert_eq!(sol.satellite_power(1, n_t), 0.0);
                    assert_eq!(sol.satellite_power(2, n_t), 0.0);
                }
                Baseline::MsSepWm => {
                    for s in 0..3 {
                        assert!((sol.satellite_power(s, n_t) - scsi.power_budget[s]).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
