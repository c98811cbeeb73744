//! OFDM residual-error kernels after transmitter-side delay/Doppler
//! precompensation, and a sample-level single-link simulator used as their
//! ground truth.
//!
//! The same two kernels describe interference paths; callers substitute the
//! interference delay and Doppler residuals for the desired-link ones.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmParams {
    pub n_subcarriers: usize,
    pub n_cp: usize,
    pub delta_f: f64,
    pub f0: f64,
    pub t_s: f64,
    pub t_useful: f64,
    pub t_cp: f64,
    pub t_sym: f64,
}

impl OfdmParams {
    pub fn new(n_subcarriers: usize, n_cp: usize, delta_f: f64, f0: f64) -> Result<Self> {
        if n_subcarriers < 2 {
            return Err(Error::InvalidConfig("need at least two subcarriers".into()));
        }
        if n_cp >= n_subcarriers {
            return Err(Error::InvalidConfig("cyclic prefix must be shorter than the symbol".into()));
        }
        if !(delta_f > 0.0) || !f0.is_finite() {
            return Err(Error::InvalidConfig("subcarrier spacing must be positive".into()));
        }
        let t_s = 1.0 / (n_subcarriers as f64 * delta_f);
        let t_useful = n_subcarriers as f64 * t_s;
        let t_cp = n_cp as f64 * t_s;
        Ok(Self {
            n_subcarriers,
            n_cp,
            delta_f,
            f0,
            t_s,
            t_useful,
            t_cp,
            t_sym: t_useful + t_cp,
        })
    }
}

/// Residual delay and Doppler left after precompensation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationError {
    /// Compensation delay minus true delay, seconds.
    pub tau_bar: f64,
    /// True Doppler minus compensated Doppler, Hz.
    pub nu_bar: f64,
    /// Doppler removed at the transmitter, Hz.
    pub nu_cps: f64,
}

/// `e^{j2π·cycles}` with the integer part of `cycles` removed first.
fn cis_cycles(cycles: f64) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * cycles.rem_euclid(1.0))
}

/// Per-subcarrier phase rotation `e^{j2π(f₀ + nΔf − ν_cps)τ̄}`.
pub fn phase_error_phi(n: usize, err: &CompensationError, params: &OfdmParams) -> C64 {
    let freq = params.f0 + n as f64 * params.delta_f - err.nu_cps;
    cis_cycles(freq * err.tau_bar)
}

/// Inter-carrier leakage `ψ(ν̄, offset)`, the normalized Dirichlet kernel
/// evaluated at `ν̄/Δf − offset`.
pub fn ici_kernel(nu_bar: f64, offset: i64, params: &OfdmParams) -> C64 {
    let n = params.n_subcarriers as f64;
    let x = nu_bar / params.delta_f - offset as f64;
    // the kernel has period N in x; fold into [-N/2, N/2)
    let r = x - n * (x / n).round();
    if r == 0.0 {
        return C64::new(1.0, 0.0);
    }
    let mag = (PI * r).sin() / (n * (PI * r / n).sin());
    C64::from_polar(1.0, PI * r * (1.0 - 1.0 / n)) * mag
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayCase {
    /// Sampling window starts inside the cyclic prefix: no ISI.
    WithinCp,
    /// Early by more than the cyclic prefix.
    BeyondCp,
    /// Late sampling window.
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayClassification {
    pub case: DelayCase,
    /// Whole-sample part of `τ̄` (truncated toward zero).
    pub n_de: i64,
    /// Fractional remainder, `|τ̂| < T_s`, same sign as `τ̄`.
    pub tau_hat: f64,
}

/// Classifies a residual delay; `τ̄ = 0` counts as within the prefix.
pub fn classify_delay_case(tau_bar: f64, params: &OfdmParams) -> DelayClassification {
    let case = if tau_bar > 0.0 {
        DelayCase::Late
    } else if -tau_bar < params.t_cp {
        DelayCase::WithinCp
    } else {
        DelayCase::BeyondCp
    };
    let n_de = (tau_bar / params.t_s).trunc();
    DelayClassification {
        case,
        n_de: n_de as i64,
        tau_hat: tau_bar - n_de * params.t_s,
    }
}

/// Brute-force transmit/receive chain for one satellite-user link.
///
/// Each OFDM symbol `X_m` is turned into the continuous-time waveform
/// `Σ_n X_m[n] e^{j2πnΔf(t − mT_sym)}` on `[mT_sym − T_cp, mT_sym + T)`,
/// upconverted, time-advanced by `τ_cps` and frequency-shifted by `−ν_cps`,
/// delayed by `tau_min` and Doppler-shifted by `ν̄ + ν_cps`, then
/// downconverted, sampled at `mT_sym + iT_s` and transformed by a
/// `1/N`-normalized DFT.
pub fn simulate_single_link(
    params: &OfdmParams,
    err: &CompensationError,
    tau_min: f64,
    tx_symbols: &[Vec<C64>],
) -> Result<Vec<Vec<C64>>> {
    let n = params.n_subcarriers;
    if classify_delay_case(err.tau_bar, params).case != DelayCase::WithinCp {
        return Err(Error::InvalidInput(
            "only delay errors inside the cyclic prefix are simulated".into(),
        ));
    }
    if !(err.nu_bar.abs() < params.delta_f) {
        return Err(Error::InvalidInput("residual Doppler must be below the subcarrier spacing".into()));
    }
    if let Some(bad) = tx_symbols.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let tau_cps = tau_min + err.tau_bar;
    let nu_sat = err.nu_bar + err.nu_cps;

    let baseband = |t: f64| -> C64 {
        let m = ((t + params.t_cp) / params.t_sym).floor();
        if m < 0.0 || m as usize >= tx_symbols.len() {
            return ZERO;
        }
        let local = t - m * params.t_sym;
        tx_symbols[m as usize]
            .iter()
            .enumerate()
            .map(|(k, x)| x * cis_cycles(k as f64 * params.delta_f * local))
            .sum()
    };
    let bandpass = |t: f64| baseband(t) * cis_cycles(params.f0 * t);
    let precompensated = |t: f64| bandpass(t + tau_cps) * cis_cycles(-(t + tau_cps) * err.nu_cps);
    let received = |t: f64| precompensated(t - tau_min) * cis_cycles(t * nu_sat);
    let downconverted = |t: f64| received(t) * cis_cycles(-params.f0 * t);

    let out = (0..tx_symbols.len())
        .map(|m| {
            let samples: Vec<C64> = (0..n)
                .map(|i| downconverted(m as f64 * params.t_sym + i as f64 * params.t_s))
                .collect();
            (0..n)
                .map(|j| {
                    samples
                        .iter()
                        .enumerate()
                        .map(|(i, y)| y * cis_cycles(-(((i * j) % n) as f64) / n as f64))
                        .sum::<C64>()
                        / n as f64
                })
                .collect()
        })
        .collect();
    Ok(out)
}

/// Frequency-domain model of the same link: `Y_m[j] = e^{j2πmT_sym ν̄}
/// Σ_n X_m[n] φⁿ ψ(ν̄, j − n)`.
///
/// The common per-symbol rotation comes from Doppler accumulated since the
/// time origin; it is unit-modulus and is absorbed into the channel phase.
pub fn frequency_domain_model(params: &OfdmParams, err: &CompensationError, tx_symbols: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let n = params.n_subcarriers;
    let phi: Vec<C64> = (0..n).map(|k| phase_error_phi(k, err, params)).collect();
    tx_symbols
        .iter()
        .enumerate()
        .map(|(m, x)| {
            let common = cis_cycles(m as f64 * params.t_sym * err.nu_bar);
            (0..n)
                .map(|j| {
                    let acc: C64 = (0..n)
                        .map(|k| x[k] * phi[k] * ici_kernel(err.nu_bar, j as i64 - k as i64, params))
                        .sum();
                    acc * common
                })
                .collect()
        })
        .collect()
}
