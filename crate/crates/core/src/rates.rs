//! Sum-rate evaluation: the covariance-exact approximation, the
//! mean-channel WMMSE surrogate, and a Monte Carlo ergodic rate.

use rayon::prelude::*;

use crate::channel::{sample_link_gain, ScenarioScsi};
use crate::error::{Error, Result};
use crate::factorization::{CovarianceFactors, QuadKind};
use crate::linalg::{CVector, C64};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    /// `log₂(1 + wᴴΩw / (Σ wᴴΩ̃w + σ²))`.
    Ap1,
    /// Rate implied by the mean-channel MSE at its optimal receiver.
    Ap2,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user_rate: Vec<f64>,
    /// `Σ β_k R_k`.
    pub sum_rate: f64,
    pub kind: RateKind,
    pub mc_stderr: Option<f64>,
}

impl RateReport {
    fn from_rates(per_user_rate: Vec<f64>, weights: &[f64], kind: RateKind) -> Self {
        let sum_rate = per_user_rate.iter().zip(weights).map(|(r, b)| r * b).sum();
        Self {
            per_user_rate,
            sum_rate,
            kind,
            mc_stderr: None,
        }
    }
}

/// Second-order link terms of one user under a given precoder set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTerms {
    /// `Q_k w_k`; entry 0 is the mean-channel response `E{h̄_kᵀ}w_k`.
    pub qw: CVector,
    /// `w_kᴴΩ_k w_k`.
    pub signal: f64,
    /// `Σ_{i≠k} w_iᴴΩ̃_k w_i`.
    pub interference: f64,
    pub noise: f64,
}

impl LinkTerms {
    /// Signal plus interference plus noise.
    pub fn total(&self) -> f64 {
        self.signal + self.interference + self.noise
    }

    pub fn mean_sq(&self) -> f64 {
        self.qw[0].norm_sqr()
    }

    pub fn rate_ap1(&self) -> f64 {
        (1.0 + self.signal / (self.interference + self.noise)).log2()
    }

    pub fn rate_ap2(&self) -> f64 {
        let m = self.mean_sq();
        // the covariance gap signal − |mean|² is ≥ 0 up to rounding
        let gap = (self.signal - m).max(0.0);
        (1.0 + m / (self.interference + gap + self.noise)).log2()
    }
}

pub fn link_terms(w: &[CVector], factors: &[CovarianceFactors], noise: &[f64]) -> Vec<LinkTerms> {
    factors
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            let mut interference = 0.0;
            let mut qw = CVector::zeros(f.num_sats() + 1);
            let mut signal = 0.0;
            for (i, wi) in w.iter().enumerate() {
                let p = f.projections(wi);
                if i == k {
                    qw = f.q_from_projections(&p);
                    signal = qw.norm_squared();
                } else {
                    interference += f.quad_from_projections(&p, QuadKind::Block);
                }
            }
            LinkTerms {
                qw,
                signal,
                interference,
                noise: noise[k],
            }
        })
        .collect()
}

fn check_dims(w: &[CVector], scsi: &ScenarioScsi) -> Result<()> {
    if w.len() != scsi.num_users {
        return Err(Error::DimensionMismatch {
            expected: scsi.num_users,
            found: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|x| x.len() != scsi.stacked_len()) {
        return Err(Error::DimensionMismatch {
            expected: scsi.stacked_len(),
            found: bad.len(),
        });
    }
    Ok(())
}

pub fn rate_ap1(w: &[CVector], scsi: &ScenarioScsi, factors: &[CovarianceFactors]) -> Result<RateReport> {
    check_dims(w, scsi)?;
    let rates = link_terms(w, factors, &scsi.noise_power).iter().map(LinkTerms::rate_ap1).collect();
    Ok(RateReport::from_rates(rates, &scsi.weights, RateKind::Ap1))
}

pub fn rate_ap2(w: &[CVector], scsi: &ScenarioScsi, factors: &[CovarianceFactors]) -> Result<RateReport> {
    check_dims(w, scsi)?;
    let rates = link_terms(w, factors, &scsi.noise_power).iter().map(LinkTerms::rate_ap2).collect();
    Ok(RateReport::from_rates(rates, &scsi.weights, RateKind::Ap2))
}

/// `g[k][i][s] = v_{s,k}ᵀ w_{s,i}`: every instantaneous channel response is
/// a per-link scalar times one of these projections.
pub fn projected_gains(w: &[CVector], factors: &[CovarianceFactors]) -> Vec<Vec<Vec<C64>>> {
    factors
        .par_iter()
        .map(|f| w.iter().map(|wi| f.projections(wi)).collect())
        .collect()
}

/// Ergodic rate under sampled channels, interference from different
/// satellites adding in power.
///
/// Trial `t` draws from its own stream derived from `(seed, t)`, so results
/// do not depend on the thread count. The standard error is that of the
/// per-trial weighted sum rate.
pub fn rate_mc(w: &[CVector], scsi: &ScenarioScsi, factors: &[CovarianceFactors], n_trials: usize, seed: u64) -> Result<RateReport> {
    check_dims(w, scsi)?;
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    let gains = projected_gains(w, factors);
    let k_count = scsi.num_users;
    let s_count = scsi.num_sats;
    let per_trial: Vec<Vec<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derived_rng(seed, &[t as u64]);
            let alpha: Vec<C64> = scsi.stats.iter().map(|st| sample_link_gain(st, &mut rng)).collect();
            (0..k_count)
                .map(|k| {
                    let g = &gains[k];
                    let a = &alpha[k * s_count..(k + 1) * s_count];
                    let desired: C64 = (0..s_count).map(|s| a[s] * g[k][s]).sum();
                    let mut interference = 0.0;
                    for (i, gi) in g.iter().enumerate() {
                        if i != k {
                            interference += (0..s_count).map(|s| (a[s] * gi[s]).norm_sqr()).sum::<f64>();
                        }
                    }
                    (1.0 + desired.norm_sqr() / (interference + scsi.noise_power[k])).log2()
                })
                .collect()
        })
        .collect();
    let n = n_trials as f64;
    let mut per_user = vec![0.0; k_count];
    let mut sums = Vec::with_capacity(n_trials);
    for trial in &per_trial {
        for (acc, r) in per_user.iter_mut().zip(trial) {
            *acc += r;
        }
        sums.push(trial.iter().zip(&scsi.weights).map(|(r, b)| r * b).sum::<f64>());
    }
    for r in &mut per_user {
        *r /= n;
    }
    let mean = sums.iter().sum::<f64>() / n;
    let stderr = if n_trials > 1 {
        (sums.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let mut report = RateReport::from_rates(per_user, &scsi.weights, RateKind::MonteCarlo);
    report.mc_stderr = Some(stderr);
    Ok(report)
}
