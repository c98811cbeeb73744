//! Joint multi-satellite alternating optimization.
//!
//! Each iteration updates the virtual receivers, sets the weights to the
//! inverse MSEs, and re-solves every user's precoder in closed form against
//! the decoupled quadratic `Ξ_k`. The covariance-factor variant uses the
//! `(S+1)`-dimensional receiver `a_k = Q_k w_k / (…)`; the mean-channel
//! variant uses a scalar receiver on `E{h̄_kᵀ}w_k`. Both share the
//! precoder step, the mean-channel receiver being embedded as `[a, 0, …, 0]`.

use std::time::Instant;

use crate::channel::ScenarioScsi;
use crate::error::{Error, Result};
use crate::factorization::{build_all_factors, CovarianceFactors, QuadKind};
use crate::linalg::{CVector, C64};
use crate::rates::{link_terms, LinkTerms};

use super::closed_form::{SteeringGram, XiContext};
use super::{
    init_precoder, project_per_satellite, AuxVars, ConvergenceTrace, IterationRecord,
    PrecoderSolution, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointMethod {
    /// Receiver through the covariance factor `Q_k`.
    CovarianceFactor,
    /// Scalar receiver on the mean channel.
    MeanChannel,
}

/// `a_k = Q_k w_k / (w_kᴴΩ_k w_k + Σ_{i≠k} w_iᴴΩ̃_k w_i + σ²_k)`.
pub fn update_receiver(w: &[CVector], k: usize, factors_k: &CovarianceFactors, sigma2_k: f64) -> CVector {
    let terms = single_terms(w, k, factors_k, sigma2_k);
    &terms.qw / C64::from(terms.total())
}

/// Scalar mean-channel receiver, returned embedded as `[a, 0, …, 0]`.
pub fn update_receiver_mean(w: &[CVector], k: usize, factors_k: &CovarianceFactors, sigma2_k: f64) -> CVector {
    let terms = single_terms(w, k, factors_k, sigma2_k);
    mean_receiver(&terms)
}

fn single_terms(w: &[CVector], k: usize, factors_k: &CovarianceFactors, sigma2_k: f64) -> LinkTerms {
    let mut terms = LinkTerms {
        qw: CVector::zeros(factors_k.num_sats() + 1),
        signal: 0.0,
        interference: 0.0,
        noise: sigma2_k,
    };
    for (i, wi) in w.iter().enumerate() {
        let p = factors_k.projections(wi);
        if i == k {
            terms.qw = factors_k.q_from_projections(&p);
            terms.signal = terms.qw.norm_squared();
        } else {
            terms.interference += factors_k.quad_from_projections(&p, QuadKind::Block);
        }
    }
    terms
}

fn mean_receiver(terms: &LinkTerms) -> CVector {
    let mut a = CVector::zeros(terms.qw.len());
    a[0] = terms.qw[0] / terms.total();
    a
}

/// `ẽ_k = aᴴa(S + I + σ²) − 2Re(aᴴQ_k w_k) + 1` for any receiver `a`.
///
/// With a receiver of the form `[a, 0, …, 0]` this is the mean-channel MSE.
pub fn mse_tilde(w: &[CVector], a_k: &CVector, k: usize, factors_k: &CovarianceFactors, sigma2_k: f64) -> Result<f64> {
    let terms = single_terms(w, k, factors_k, sigma2_k);
    mse_from_terms(a_k, &terms)
}

fn mse_from_terms(a: &CVector, terms: &LinkTerms) -> Result<f64> {
    let cross = a.dotc(&terms.qw);
    let e = C64::from(a.norm_squared() * terms.total()) - cross - cross.conj() + C64::from(1.0);
    let scale = 1.0 + a.norm_squared() * terms.total();
    if e.im.abs() > 1e-10 * scale {
        return Err(Error::Numerical(format!("MSE has imaginary part {}", e.im)));
    }
    if !(e.re > 0.0 && e.re.is_finite()) {
        return Err(Error::Numerical(format!("MSE {} is not positive", e.re)));
    }
    Ok(e.re)
}

struct IterateState {
    terms: Vec<LinkTerms>,
    a: Vec<CVector>,
    e: Vec<f64>,
}

fn evaluate(method: JointMethod, w: &[CVector], factors: &[CovarianceFactors], noise: &[f64]) -> Result<IterateState> {
    let terms = link_terms(w, factors, noise);
    let a: Vec<CVector> = terms
        .iter()
        .map(|t| match method {
            JointMethod::CovarianceFactor => &t.qw / C64::from(t.total()),
            JointMethod::MeanChannel => mean_receiver(t),
        })
        .collect();
    let e = a
        .iter()
        .zip(&terms)
        .map(|(a, t)| mse_from_terms(a, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(IterateState { terms, a, e })
}

fn record(iteration: usize, state: &IterateState, weights: &[f64]) -> IterationRecord {
    // with u = 1/ẽ the objective Σβ(uẽ − log₂u) equals Σβ(1 + log₂ẽ)
    let objective = state
        .e
        .iter()
        .zip(weights)
        .map(|(e, b)| {
            let u = 1.0 / e;
            b * (u * e - u.log2())
        })
        .sum();
    let rate_ap1 = state.terms.iter().zip(weights).map(|(t, b)| b * t.rate_ap1()).sum();
    let rate_ap2 = state.terms.iter().zip(weights).map(|(t, b)| b * t.rate_ap2()).sum();
    IterationRecord {
        iteration,
        objective,
        rate_ap1,
        rate_ap2,
        e_tilde: state.e.clone(),
    }
}

/// Runs the alternating optimization and the final per-satellite projection.
///
/// The loop stops after `i_max` precoder updates, or once the last update
/// reduced `Σβ log₂ ẽ` by at most `χ`. A numerical breakdown keeps the last
/// finite iterate and sets the trace flag.
pub fn solve_joint(scsi: &ScenarioScsi, cfg: &SolverConfig, method: JointMethod) -> Result<(PrecoderSolution, ConvergenceTrace)> {
    cfg.validate()?;
    scsi.validate()?;
    let start = Instant::now();
    let factors = build_all_factors(scsi)?;
    let gram = SteeringGram::worthwhile(scsi.num_users, scsi.array.n_t()).then(|| SteeringGram::new(&factors));
    let mut sol = init_precoder(scsi, &factors, cfg.init_scheme);
    let p_k = sol.per_user_power.clone();
    let beta = &scsi.weights;
    let noise = &scsi.noise_power;

    let mut trace = ConvergenceTrace::default();
    let mut state = evaluate(method, &sol.w, &factors, noise)?;
    trace.records.push(record(0, &state, beta));
    if cfg.record_iterates {
        trace.iterates.push(sol.w.clone());
    }

    for n in 1..=cfg.i_max {
        let u: Vec<f64> = state.e.iter().map(|e| 1.0 / e).collect();
        let lambda: Vec<f64> = (0..scsi.num_users).map(|k| beta[k] * u[k] * state.a[k].norm_squared()).collect();
        let rhs: Vec<CVector> = (0..scsi.num_users).map(|k| &state.a[k] * C64::from(beta[k] * u[k])).collect();
        let mu: Vec<f64> = (0..scsi.num_users).map(|k| lambda[k] * noise[k] / p_k[k]).collect();
        let updates = XiContext::new(&factors, lambda, gram.as_ref(), cfg.ridge_floor)
            .and_then(|ctx| ctx.solve_all(&rhs, &mu, &p_k));
        let updates = match updates {
            Ok(u) => u,
            Err(_) => {
                trace.breakdown = true;
                break;
            }
        };
        trace.linear_solves += scsi.num_users;
        let w_new: Vec<CVector> = updates.iter().map(|c| c.w.clone()).collect();
        let next = match evaluate(method, &w_new, &factors, noise) {
            Ok(s) => s,
            Err(_) => {
                trace.breakdown = true;
                break;
            }
        };
        trace.final_aux = Some(AuxVars {
            a: state.a.clone(),
            u,
            e_tilde: state.e.clone(),
        });
        for (k, c) in updates.into_iter().enumerate() {
            sol.eta[k] = c.eta;
            sol.inactive[k] = c.inactive;
        }
        sol.w = w_new;
        trace.iterations = n;
        trace.records.push(record(n, &next, beta));
        if cfg.record_iterates {
            trace.iterates.push(sol.w.clone());
        }
        let gain: f64 = (0..scsi.num_users).map(|k| beta[k] * (state.e[k] / next.e[k]).log2()).sum();
        state = next;
        if gain <= cfg.chi {
            break;
        }
    }

    project_per_satellite(&mut sol, &scsi.power_budget, scsi.array.n_t());
    trace.elapsed_secs = start.elapsed().as_secs_f64();
    debug_assert!(sol.w.iter().all(|w| w.iter().all(|x| x.re.is_finite() && x.im.is_finite())));
    Ok((sol, trace))
}

pub fn solve_ms_jocdwm(scsi: &ScenarioScsi, cfg: &SolverConfig) -> Result<(PrecoderSolution, ConvergenceTrace)> {
    solve_joint(scsi, cfg, JointMethod::CovarianceFactor)
}

pub fn solve_ms_jowm(scsi: &ScenarioScsi, cfg: &SolverConfig) -> Result<(PrecoderSolution, ConvergenceTrace)> {
    solve_joint(scsi, cfg, JointMethod::MeanChannel)
}
