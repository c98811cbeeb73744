//! Precoder design: the joint covariance-factor WMMSE loop, its mean-channel
//! counterpart, and single-/separate-satellite baselines.

mod baselines;
mod closed_form;
mod joint;

pub use baselines::{rzf, solve_baseline, solve_baselines, wmmse_single_group, Baseline, GroupWmmse};
pub use closed_form::{closed_form_precoder, ClosedForm, SteeringGram, XiContext};
pub use joint::{
    mse_tilde, solve_joint, solve_ms_jocdwm, solve_ms_jowm, update_receiver, update_receiver_mean, JointMethod,
};

use serde::{Deserialize, Serialize};

use crate::channel::ScenarioScsi;
use crate::error::{Error, Result};
use crate::factorization::CovarianceFactors;
use crate::linalg::{CMatrix, CVector, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Conjugate of the stacked mean channel.
    MatchedFilter,
    /// Dominant eigenvector of each user's covariance.
    DominantEigen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub i_max: usize,
    pub chi: f64,
    /// Iteration cap of the baseline WMMSE loops.
    pub i_max1: usize,
    pub init_scheme: InitScheme,
    pub ridge_floor: f64,
    /// Keep every iterate's precoder in the trace.
    #[serde(skip)]
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            i_max: 10,
            chi: 1e-3,
            i_max1: 300,
            init_scheme: InitScheme::MatchedFilter,
            ridge_floor: 1e-12,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.i_max == 0 || self.i_max1 == 0 {
            return Err(Error::InvalidConfig("iteration caps must be at least 1".into()));
        }
        if !(self.chi > 0.0) {
            return Err(Error::InvalidConfig("convergence threshold must be positive".into()));
        }
        if !(self.ridge_floor >= 0.0) {
            return Err(Error::InvalidConfig("ridge floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-user stacked precoders `w_k ∈ ℂ^{S·N_T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    pub w: Vec<CVector>,
    pub eta: Vec<f64>,
    pub per_user_power: Vec<f64>,
    /// Users whose closed-form right-hand side vanished.
    pub inactive: Vec<bool>,
}

impl PrecoderSolution {
    pub fn zeros(num_users: usize, stacked_len: usize) -> Self {
        Self {
            w: vec![CVector::zeros(stacked_len); num_users],
            eta: vec![0.0; num_users],
            per_user_power: vec![0.0; num_users],
            inactive: vec![true; num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.w.len()
    }

    /// `‖W_s‖²_F` for satellite `s`.
    pub fn satellite_power(&self, s: usize, n_t: usize) -> f64 {
        self.w.iter().map(|w| w.rows(s * n_t, n_t).norm_squared()).sum()
    }

    /// Satellite `s`'s `N_T × K` precoding matrix.
    pub fn satellite_matrix(&self, s: usize, n_t: usize) -> CMatrix {
        CMatrix::from_fn(n_t, self.w.len(), |i, k| self.w[k][s * n_t + i])
    }

    pub fn permute_users(&self, perm: &[usize]) -> Self {
        Self {
            w: perm.iter().map(|&p| self.w[p].clone()).collect(),
            eta: perm.iter().map(|&p| self.eta[p]).collect(),
            per_user_power: perm.iter().map(|&p| self.per_user_power[p]).collect(),
            inactive: perm.iter().map(|&p| self.inactive[p]).collect(),
        }
    }

    pub fn permute_sats(&self, perm: &[usize], n_t: usize) -> Self {
        let mut out = self.clone();
        for (k, w) in self.w.iter().enumerate() {
            for (s, &src) in perm.iter().enumerate() {
                out.w[k].rows_mut(s * n_t, n_t).copy_from(&w.rows(src * n_t, n_t));
            }
        }
        out
    }
}

/// Virtual receivers and MSE weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxVars {
    /// `a_k ∈ ℂ^{S+1}`; the mean-channel method keeps its scalar receiver in
    /// entry 0 and zeros elsewhere.
    pub a: Vec<CVector>,
    pub u: Vec<f64>,
    pub e_tilde: Vec<f64>,
}

impl AuxVars {
    /// Closed-form labels `ā_k = u_k a_k` and `ū_k = u_k a_kᴴa_k`.
    pub fn labels(&self) -> (Vec<CVector>, Vec<f64>) {
        let a_bar = self.a.iter().zip(&self.u).map(|(a, &u)| a * C64::from(u)).collect();
        let u_bar = self.a.iter().zip(&self.u).map(|(a, &u)| u * a.norm_squared()).collect();
        (a_bar, u_bar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 0 is the initial point.
    pub iteration: usize,
    /// `Σβ(uẽ − log₂u)` with the receiver and weight optimal for this iterate.
    pub objective: f64,
    pub rate_ap1: f64,
    pub rate_ap2: f64,
    pub e_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    /// Precoders of each record, when requested.
    pub iterates: Vec<Vec<CVector>>,
    pub iterations: usize,
    pub linear_solves: usize,
    pub elapsed_secs: f64,
    pub breakdown: bool,
    /// Receivers and weights used by the last precoder update.
    pub final_aux: Option<AuxVars>,
}

/// Equal split of the total budget, `P_k = Σ P_s / K`.
pub fn per_user_power(scsi: &ScenarioScsi) -> f64 {
    scsi.power_budget.iter().sum::<f64>() / scsi.num_users as f64
}

/// Scales each satellite's slice down to its budget; never scales up.
pub fn project_per_satellite(sol: &mut PrecoderSolution, power_budget: &[f64], n_t: usize) {
    for (s, &p) in power_budget.iter().enumerate() {
        let total = sol.satellite_power(s, n_t);
        if total > p {
            let scale = (p / total).sqrt();
            for w in &mut sol.w {
                w.rows_mut(s * n_t, n_t).scale_mut(scale);
            }
        }
    }
}

/// Initial precoders with `‖w_k‖² = P_k`.
pub fn init_precoder(scsi: &ScenarioScsi, factors: &[CovarianceFactors], scheme: InitScheme) -> PrecoderSolution {
    let p_k = per_user_power(scsi);
    let n = scsi.stacked_len();
    let mut sol = PrecoderSolution::zeros(scsi.num_users, n);
    for (k, f) in factors.iter().enumerate() {
        let mean = scsi.stacked_mean(k).conjugate();
        let dir = match scheme {
            InitScheme::MatchedFilter if mean.norm() > 0.0 => mean,
            _ => dominant_direction(f),
        };
        let norm = dir.norm();
        if norm > 0.0 {
            sol.w[k] = dir * C64::from(p_k.sqrt() / norm);
            sol.eta[k] = 1.0;
            sol.inactive[k] = false;
        }
        sol.per_user_power[k] = p_k;
    }
    sol
}

/// Dominant eigenvector of `Ω = QᴴQ`, via the `(S+1)`-dimensional `QQᴴ`.
fn dominant_direction(f: &CovarianceFactors) -> CVector {
    let q = f.dense_q();
    let gram = &q * q.adjoint();
    let eig = gram.symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut x = q.adjoint() * eig.eigenvectors.column(best);
    // deterministic phase: largest-magnitude entry real and positive
    let mut idx = 0;
    for i in 1..x.len() {
        if x[i].norm() > x[idx].norm() * (1.0 + 1e-12) {
            idx = i;
        }
    }
    if x[idx].norm() > 0.0 {
        let ph = x[idx].conj() / x[idx].norm();
        x *= ph;
    }
    x
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::channel::{mean_phase_factor, ArrayGeometry, LinkStat, ScenarioScsi};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// Random scenario with link powers scaled so that the per-user SNR
    /// `γP_k/σ²` sits around `snr_db`.
    pub fn random_scenario(seed: u64, k: usize, s: usize, n_v: usize, n_h: usize, snr_db: f64) -> ScenarioScsi {
        let mut rng = rng_from_seed(seed);
        let stats = (0..k * s)
            .map(|_| {
                let var = rng.random_range(0.0..0.6);
                LinkStat {
                    gamma: rng.random_range(0.3..2.0),
                    kappa: 10f64.powf(rng.random_range(-1.0..3.0)),
                    theta_x: rng.random_range(-3.0..3.0),
                    theta_y: rng.random_range(0.3..2.8),
                    mean_phase: mean_phase_factor(var).unwrap(),
                    phase_var: var,
                }
            })
            .collect();
        let p_s = 1.0;
        let p_k = p_s * s as f64 / k as f64;
        let noise = p_k / 10f64.powf(snr_db / 10.0);
        ScenarioScsi::new(
            k,
            s,
            stats,
            vec![noise; k],
            vec![1.0; k],
            vec![p_s; s],
            ArrayGeometry::new(n_v, n_h).unwrap(),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::random_scenario;
    use super::*;
    use crate::factorization::build_all_factors;

    #[test]
    fn projection_examples() {
        let mut sol = PrecoderSolution::zeros(2, 4);
        sol.w[0][0] = C64::new(1.0, 0.0);
        sol.w[1][1] = C64::new(0.0, 1.0);
        sol.w[0][2] = C64::new(0.5, 0.0);
        // satellite 0: power 2 against budget 1, satellite 1: 0.25 against 1
        project_per_satellite(&mut sol, &[1.0, 1.0], 2);
        assert!((sol.satellite_power(0, 2) - 1.0).abs() < 1e-15);
        assert!((sol.w[0][0].re - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sol.w[0][2], C64::new(0.5, 0.0));
    }

    #[test]
    fn init_power_split() {
        let scsi = random_scenario(1, 48, 5, 2, 2, 10.0);
        let f = build_all_factors(&scsi).unwrap();
        let sol = init_precoder(&scsi, &f, InitScheme::MatchedFilter);
        for w in &sol.w {
            assert!((w.norm_squared() - 5.0 / 48.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_single_los_user_is_mrt() {
        let mut scsi = random_scenario(2, 1, 1, 3, 3, 10.0);
        scsi.stats[0].kappa = f64::INFINITY;
        let f = build_all_factors(&scsi).unwrap();
        let sol = init_precoder(&scsi, &f, InitScheme::MatchedFilter);
        let v = f[0].steering[0].conjugate();
        let cos = sol.w[0].dotc(&v).norm() / sol.w[0].norm();
        assert!((cos - 1.0).abs() < 1e-12);
        assert!((sol.w[0].norm_squared() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_user_uses_eigen_fallback() {
        let mut scsi = random_scenario(3, 2, 3, 2, 2, 10.0);
        for s in 0..3 {
            scsi.stat_mut(0, s).kappa = 0.0;
        }
        let f = build_all_factors(&scsi).unwrap();
        let sol = init_precoder(&scsi, &f, InitScheme::MatchedFilter);
        let p_k = per_user_power(&scsi);
        assert!((sol.w[0].norm_squared() - p_k).abs() < 1e-12);
        // attains the top eigenvalue of Ω
        let omega = scsi.dense_omega(0);
        let rayleigh = (sol.w[0].adjoint() * &omega * &sol.w[0])[(0, 0)].re / p_k;
        let top = omega.symmetric_eigenvalues().max();
        assert!((rayleigh - top).abs() < 1e-10 * top);
    }
}
