//! Statistical channel description: steering vectors, Rician statistics,
//! mean/covariance blocks, realization sampling and the analytic link budget
//! that produces the per-link statistics.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LinkGeometry, SPEED_OF_LIGHT_M_S};
use crate::linalg::{CMatrix, CVector, C64, ZERO};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_v: usize,
    pub n_h: usize,
}

impl ArrayGeometry {
    pub fn new(n_v: usize, n_h: usize) -> Result<Self> {
        if n_v == 0 || n_h == 0 {
            return Err(Error::InvalidConfig("array dimensions must be at least 1".into()));
        }
        Ok(Self { n_v, n_h })
    }

    pub fn n_t(&self) -> usize {
        self.n_v * self.n_h
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self { n_v: 10, n_h: 10 }
    }
}

/// Unit-norm UPA response `v_Nv(cos θʸ) ⊗ v_Nh(sin θʸ cos θˣ)`.
pub fn steering_vector(theta_x: f64, theta_y: f64, array: &ArrayGeometry) -> CVector {
    let xv = theta_y.cos();
    let xh = theta_y.sin() * theta_x.cos();
    let scale = 1.0 / (array.n_t() as f64).sqrt();
    let mut v = CVector::zeros(array.n_t());
    for p in 0..array.n_v {
        for q in 0..array.n_h {
            let phase = -PI * (p as f64 * xv + q as f64 * xh);
            v[p * array.n_h + q] = C64::from_polar(scale, phase);
        }
    }
    v
}

/// Second-order statistics of one satellite-user link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStat {
    pub gamma: f64,
    /// Rician factor; `f64::INFINITY` denotes a pure LoS link.
    pub kappa: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub mean_phase: C64,
    pub phase_var: f64,
}

impl LinkStat {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidInput(format!("kappa {} must be nonnegative", self.kappa)));
        }
        if !(self.mean_phase.norm() <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput("|mean phase factor| exceeds 1".into()));
        }
        if !(self.phase_var >= 0.0) {
            return Err(Error::InvalidInput("phase variance must be nonnegative".into()));
        }
        if !(self.theta_x.is_finite() && self.theta_y.is_finite()) {
            return Err(Error::InvalidInput("departure angles must be finite".into()));
        }
        Ok(())
    }

    /// `κ/(κ+1)`, the LoS power fraction, valid for `κ = ∞`.
    pub fn los_fraction(&self) -> f64 {
        if self.kappa.is_infinite() {
            1.0
        } else {
            self.kappa / (self.kappa + 1.0)
        }
    }

    pub fn steering(&self, array: &ArrayGeometry) -> CVector {
        steering_vector(self.theta_x, self.theta_y, array)
    }
}

/// Mean channel gain `ρ = √(κγ/(2(κ+1)))(1+j)φ̄`.
pub fn rho(stat: &LinkStat) -> C64 {
    if stat.kappa == 0.0 {
        return ZERO;
    }
    (stat.gamma * stat.los_fraction() / 2.0).sqrt() * C64::new(1.0, 1.0) * stat.mean_phase
}

/// `E{e^{jϱ}}` for `ϱ ~ N(0, ς²)`.
pub fn mean_phase_factor(phase_var: f64) -> Result<C64> {
    if !(phase_var >= 0.0) {
        return Err(Error::InvalidInput(format!("phase variance {phase_var} is negative")));
    }
    Ok(C64::new((-phase_var / 2.0).exp(), 0.0))
}

pub fn mean_channel(stat: &LinkStat, array: &ArrayGeometry) -> CVector {
    stat.steering(array) * rho(stat)
}

/// `E{h̄*_{s1} h̄ᵀ_{s2}}` for two links of the same user.
pub fn covariance_block(s1: &LinkStat, s2: &LinkStat, same_satellite: bool, array: &ArrayGeometry) -> CMatrix {
    let v1 = s1.steering(array);
    if same_satellite {
        let outer = v1.conjugate() * v1.transpose();
        return outer * C64::from(s1.gamma);
    }
    let v2 = s2.steering(array);
    (v1.conjugate() * v2.transpose()) * (rho(s1).conj() * rho(s2))
}

/// Per-link statistics for all users and satellites plus the per-user and
/// per-satellite scalars needed by the precoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScsi {
    pub num_users: usize,
    pub num_sats: usize,
    /// Row-major `K × S`: `stats[k * S + s]`.
    pub stats: Vec<LinkStat>,
    pub noise_power: Vec<f64>,
    pub weights: Vec<f64>,
    pub power_budget: Vec<f64>,
    pub array: ArrayGeometry,
}

impl ScenarioScsi {
    pub fn new(
        num_users: usize,
        num_sats: usize,
        stats: Vec<LinkStat>,
        noise_power: Vec<f64>,
        weights: Vec<f64>,
        power_budget: Vec<f64>,
        array: ArrayGeometry,
    ) -> Result<Self> {
        let scsi = Self {
            num_users,
            num_sats,
            stats,
            noise_power,
            weights,
            power_budget,
            array,
        };
        scsi.validate()?;
        Ok(scsi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_sats == 0 {
            return Err(Error::InvalidInput("scenario needs at least one user and one satellite".into()));
        }
        let check = |expected: usize, found: usize| {
            if expected != found {
                Err(Error::DimensionMismatch { expected, found })
            } else {
                Ok(())
            }
        };
        check(self.num_users * self.num_sats, self.stats.len())?;
        check(self.num_users, self.noise_power.len())?;
        check(self.num_users, self.weights.len())?;
        check(self.num_sats, self.power_budget.len())?;
        for st in &self.stats {
            st.validate()?;
        }
        if self.noise_power.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("noise powers must be positive".into()));
        }
        if self.weights.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("user weights must be nonnegative".into()));
        }
        if self.power_budget.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("power budgets must be positive".into()));
        }
        Ok(())
    }

    pub fn stat(&self, k: usize, s: usize) -> &LinkStat {
        &self.stats[k * self.num_sats + s]
    }

    pub fn stat_mut(&mut self, k: usize, s: usize) -> &mut LinkStat {
        &mut self.stats[k * self.num_sats + s]
    }

    /// Length `S·N_T` of a stacked per-user precoder.
    pub fn stacked_len(&self) -> usize {
        self.num_sats * self.array.n_t()
    }

    /// Stacked mean channel `E{h̄_k}` (unconjugated, so `E{h̄ᵀ}w` is `dotu`).
    pub fn stacked_mean(&self, k: usize) -> CVector {
        let n_t = self.array.n_t();
        let mut out = CVector::zeros(self.stacked_len());
        for s in 0..self.num_sats {
            out.rows_mut(s * n_t, n_t).copy_from(&mean_channel(self.stat(k, s), &self.array));
        }
        out
    }

    /// Dense `Ω_k`, for tests and small reference computations.
    pub fn dense_omega(&self, k: usize) -> CMatrix {
        let n_t = self.array.n_t();
        let mut out = CMatrix::zeros(self.stacked_len(), self.stacked_len());
        for s1 in 0..self.num_sats {
            for s2 in 0..self.num_sats {
                let blk = covariance_block(self.stat(k, s1), self.stat(k, s2), s1 == s2, &self.array);
                out.view_mut((s1 * n_t, s2 * n_t), (n_t, n_t)).copy_from(&blk);
            }
        }
        out
    }

    /// Dense block-diagonal `Ω̃_k`.
    pub fn dense_omega_tilde(&self, k: usize) -> CMatrix {
        let n_t = self.array.n_t();
        let mut out = CMatrix::zeros(self.stacked_len(), self.stacked_len());
        for s in 0..self.num_sats {
            let st = self.stat(k, s);
            let blk = covariance_block(st, st, true, &self.array);
            out.view_mut((s * n_t, s * n_t), (n_t, n_t)).copy_from(&blk);
        }
        out
    }

    /// Reorders users by `perm` (new user `k` is old user `perm[k]`).
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (k, &src) in perm.iter().enumerate() {
            for s in 0..self.num_sats {
                out.stats[k * self.num_sats + s] = *self.stat(src, s);
            }
            out.noise_power[k] = self.noise_power[src];
            out.weights[k] = self.weights[src];
        }
        out
    }

    /// Reorders satellites by `perm` (new satellite `s` is old `perm[s]`).
    pub fn permute_sats(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for k in 0..self.num_users {
            for (s, &src) in perm.iter().enumerate() {
                out.stats[k * self.num_sats + s] = *self.stat(k, src);
            }
        }
        for (s, &src) in perm.iter().enumerate() {
            out.power_budget[s] = self.power_budget[src];
        }
        out
    }
}

/// One draw of the per-link channels, `h̄_{s,k} = a·v·e^{jϱ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub num_sats: usize,
    /// Row-major `K × S`.
    pub h_bar: Vec<CVector>,
}

impl ChannelRealization {
    pub fn link(&self, k: usize, s: usize) -> &CVector {
        &self.h_bar[k * self.num_sats + s]
    }
}

/// Complex scalar gain `a·e^{jϱ}` multiplying the steering vector.
pub fn sample_link_gain<R: Rng + ?Sized>(stat: &LinkStat, rng: &mut R) -> C64 {
    let los = stat.los_fraction();
    let scatter_var = stat.gamma * (1.0 - los);
    let mut a = C64::from_polar((stat.gamma * los).sqrt(), FRAC_PI_4);
    if scatter_var > 0.0 {
        let sd = (scatter_var / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        a += C64::new(sd * re, sd * im);
    }
    if stat.phase_var > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        a *= C64::from_polar(1.0, stat.phase_var.sqrt() * z);
    }
    a
}

pub fn sample_realization<R: Rng + ?Sized>(scsi: &ScenarioScsi, rng: &mut R) -> ChannelRealization {
    let h_bar = scsi
        .stats
        .iter()
        .map(|st| st.steering(&scsi.array) * sample_link_gain(st, rng))
        .collect();
    ChannelRealization {
        num_sats: scsi.num_sats,
        h_bar,
    }
}

/// Law of the per-link Rician factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaModel {
    /// Same κ on every link, in dB; `inf` gives pure LoS.
    ConstantDb { value_db: f64 },
    /// κ in dB drawn from a normal law, i.e. lognormal in linear units.
    NormalDb { mean_db: f64, std_db: f64 },
}

impl Default for KappaModel {
    fn default() -> Self {
        KappaModel::NormalDb {
            mean_db: 25.0,
            std_db: 4.0,
        }
    }
}

impl KappaModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let db = match *self {
            KappaModel::ConstantDb { value_db } => value_db,
            KappaModel::NormalDb { mean_db, std_db } => Normal::new(mean_db, std_db)
                .map_err(|e| Error::InvalidConfig(format!("kappa law: {e}")))?
                .sample(rng),
        };
        Ok(db_to_linear(db))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    if db == f64::INFINITY {
        f64::INFINITY
    } else {
        10f64.powf(db / 10.0)
    }
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudgetConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub noise_temperature_k: f64,
    pub noise_figure_db: f64,
    pub tx_element_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub kappa: KappaModel,
    /// Phase-error variance ς² applied to every link.
    pub phase_var: f64,
    pub user_weight: f64,
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            subcarrier_spacing_hz: 30e3,
            noise_temperature_k: 290.0,
            noise_figure_db: 7.0,
            tx_element_gain_dbi: 6.0,
            rx_gain_dbi: 0.0,
            kappa: KappaModel::default(),
            phase_var: 0.05,
            user_weight: 1.0,
        }
    }
}

impl LinkBudgetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::InvalidConfig("subcarrier spacing must be positive".into()));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::InvalidConfig("carrier frequency must be positive".into()));
        }
        if !(self.noise_temperature_k > 0.0) {
            return Err(Error::InvalidConfig("noise temperature must be positive".into()));
        }
        if !(self.phase_var >= 0.0) {
            return Err(Error::InvalidConfig("phase variance must be nonnegative".into()));
        }
        if !(self.user_weight >= 0.0) {
            return Err(Error::InvalidConfig("user weight must be nonnegative".into()));
        }
        Ok(())
    }

    /// Thermal noise per subcarrier, W.
    pub fn noise_power_w(&self) -> f64 {
        BOLTZMANN * self.noise_temperature_k * self.subcarrier_spacing_hz * db_to_linear(self.noise_figure_db)
    }
}

/// Free-space path loss in dB at `range_km`.
pub fn fspl_db(range_km: f64, carrier_hz: f64) -> Result<f64> {
    if !(range_km > 0.0) {
        return Err(Error::InvalidInput(format!("range {range_km} km must be positive")));
    }
    Ok(20.0 * (4.0 * PI * range_km * 1e3 * carrier_hz / SPEED_OF_LIGHT_M_S).log10())
}

/// Average array-output channel power `γ` of one link.
///
/// The steering vector has unit norm, so the full array gain `N_T` is
/// folded into `γ`.
pub fn link_gamma(range_km: f64, n_t: usize, cfg: &LinkBudgetConfig) -> Result<f64> {
    let loss_db = fspl_db(range_km, cfg.carrier_hz)?;
    Ok(n_t as f64 * db_to_linear(cfg.tx_element_gain_dbi + cfg.rx_gain_dbi - loss_db))
}

/// Builds a scenario from per-link geometry, `links[k * S + s]`.
pub fn link_budget_scsi<R: Rng + ?Sized>(
    links: &[LinkGeometry],
    num_users: usize,
    num_sats: usize,
    power_budget: Vec<f64>,
    array: ArrayGeometry,
    cfg: &LinkBudgetConfig,
    rng: &mut R,
) -> Result<ScenarioScsi> {
    cfg.validate()?;
    if links.len() != num_users * num_sats {
        return Err(Error::DimensionMismatch {
            expected: num_users * num_sats,
            found: links.len(),
        });
    }
    let phi = mean_phase_factor(cfg.phase_var)?;
    let stats = links
        .iter()
        .map(|g| {
            Ok(LinkStat {
                gamma: link_gamma(g.slant_range_km, array.n_t(), cfg)?,
                kappa: cfg.kappa.sample(rng)?,
                theta_x: g.theta_x,
                theta_y: g.theta_y,
                mean_phase: phi,
                phase_var: cfg.phase_var,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScenarioScsi::new(
        num_users,
        num_sats,
        stats,
        vec![cfg.noise_power_w(); num_users],
        vec![cfg.user_weight; num_users],
        power_budget,
        array,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_rel;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn stat(gamma: f64, kappa: f64, phase_var: f64) -> LinkStat {
        LinkStat {
            gamma,
            kappa,
            theta_x: 0.7,
            theta_y: 1.1,
            mean_phase: mean_phase_factor(phase_var).unwrap(),
            phase_var,
        }
    }

    #[test]
    fn steering_trivial_cases() {
        let one = ArrayGeometry::new(1, 1).unwrap();
        let v = steering_vector(0.3, 2.0, &one);
        assert_eq!(v.len(), 1);
        assert_relative_eq!(v[0].re, 1.0);
        let two = ArrayGeometry::new(2, 2).unwrap();
        let v = steering_vector(PI / 2.0, PI / 2.0, &two);
        for x in v.iter() {
            assert!((x - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_phases_match_double_loop() {
        let arr = ArrayGeometry::new(10, 10).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..20 {
            let tx: f64 = rng.random_range(-PI..PI);
            let ty: f64 = rng.random_range(0.0..PI);
            let v = steering_vector(tx, ty, &arr);
            assert!((v.norm() - 1.0).abs() < 1e-12);
            for p in 0..10 {
                for q in 0..10 {
                    let expect = -PI * (p as f64 * ty.cos() + q as f64 * ty.sin() * tx.cos());
                    let got = v[p * 10 + q].arg();
                    let diff = (got - expect).rem_euclid(2.0 * PI);
                    assert!(diff < 1e-9 || 2.0 * PI - diff < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rho_examples() {
        let s = LinkStat {
            mean_phase: C64::new(1.0, 0.0),
            ..stat(1.0, 1.0, 0.0)
        };
        let r = rho(&s);
        assert!((r - C64::new(0.5, 0.5)).norm() < 1e-15);
        assert_relative_eq!(r.norm_sqr(), 0.5, epsilon = 1e-15);
        assert_eq!(rho(&stat(1.0, 0.0, 0.3)), ZERO);
        let s = stat(2.0, 10.0, 0.5);
        assert_relative_eq!(rho(&s).norm_sqr(), 10.0 / 11.0 * 2.0 * (-0.5f64).exp(), epsilon = 1e-14);
        let inf = stat(3.0, f64::INFINITY, 0.0);
        assert_relative_eq!(rho(&inf).norm_sqr(), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn mean_phase_factor_values() {
        assert_eq!(mean_phase_factor(0.0).unwrap(), C64::new(1.0, 0.0));
        assert_relative_eq!(mean_phase_factor(0.5).unwrap().re, 0.77880, epsilon = 1e-5);
        assert_relative_eq!(mean_phase_factor(0.05).unwrap().re, 0.97531, epsilon = 1e-5);
        assert!(mean_phase_factor(-1.0).is_err());
    }

    #[test]
    fn mean_phase_factor_matches_monte_carlo() {
        let mut rng = rng_from_seed(2);
        for var in [0.05, 0.5] {
            let n = 1_000_000;
            let sd = f64::sqrt(var);
            let mut acc = C64::new(0.0, 0.0);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                acc += C64::from_polar(1.0, sd * z);
            }
            let mc = acc / n as f64;
            assert!((mc - mean_phase_factor(var).unwrap()).norm() < 2e-3);
        }
    }

    #[test]
    fn mean_channel_examples() {
        let arr1 = ArrayGeometry::new(1, 1).unwrap();
        let s = LinkStat {
            mean_phase: C64::new(1.0, 0.0),
            ..stat(1.0, 1.0, 0.0)
        };
        assert!((mean_channel(&s, &arr1)[0] - C64::new(0.5, 0.5)).norm() < 1e-15);
        let arr = ArrayGeometry::new(3, 2).unwrap();
        assert!(mean_channel(&stat(1.0, 0.0, 0.2), &arr).norm() == 0.0);
    }

    #[test]
    fn covariance_examples() {
        let arr1 = ArrayGeometry::new(1, 1).unwrap();
        let s = stat(1.0, 3.0, 0.1);
        let c = covariance_block(&s, &s, true, &arr1);
        assert!((c[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let arr = ArrayGeometry::new(2, 3).unwrap();
        let z = covariance_block(&stat(1.0, 0.0, 0.1), &stat(2.0, 5.0, 0.1), false, &arr);
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn same_satellite_block_is_rank_one_psd() {
        let arr = ArrayGeometry::new(3, 3).unwrap();
        let s = stat(2.5, 4.0, 0.2);
        let c = covariance_block(&s, &s, true, &arr);
        assert!(crate::linalg::is_hermitian(&c, 1e-14));
        let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        assert_relative_eq!(eig[0], 2.5, epsilon = 1e-12);
        assert!(eig[1].abs() < 1e-10 * 2.5 && eig.iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn covariance_to_outer_mean_ratio() {
        let arr = ArrayGeometry::new(2, 3).unwrap();
        let s = stat(1.7, 6.0, 0.3);
        let cov = covariance_block(&s, &s, true, &arr);
        let m = mean_channel(&s, &arr);
        let outer = m.conjugate() * m.transpose();
        let expect = (s.kappa + 1.0) / (s.kappa * s.mean_phase.norm_sqr());
        for (a, b) in cov.iter().zip(outer.iter()) {
            let ratio = a / b;
            assert!((ratio - C64::from(expect)).norm() < 1e-9 * expect);
        }
    }

    #[test]
    fn deterministic_los_limit() {
        let arr = ArrayGeometry::new(2, 2).unwrap();
        let s = stat(3.0, 1e12, 0.0);
        let scsi = ScenarioScsi::new(1, 1, vec![s], vec![1.0], vec![1.0], vec![1.0], arr).unwrap();
        let mut rng = rng_from_seed(3);
        let h = sample_realization(&scsi, &mut rng);
        let v = s.steering(&arr);
        let proj = h.link(0, 0).dot(&v.conjugate()).norm();
        assert!((proj - 3f64.sqrt()).abs() < 1e-4 * 3f64.sqrt());
    }

    #[test]
    fn realization_moments_match_statistics() {
        let arr = ArrayGeometry::new(2, 2).unwrap();
        let s1 = stat(2.0, 10.0, 0.5);
        let s2 = LinkStat {
            theta_x: -0.4,
            theta_y: 2.0,
            ..stat(0.8, 3.0, 0.2)
        };
        let scsi = ScenarioScsi::new(1, 2, vec![s1, s2], vec![1.0], vec![1.0], vec![1.0, 1.0], arr).unwrap();
        let mut rng = rng_from_seed(4);
        let n = 1_000_000;
        let v1 = s1.steering(&arr);
        let v2 = s2.steering(&arr);
        let (mut m1, mut m2, mut p1, mut cross) = (ZERO, ZERO, 0.0, ZERO);
        let mut cov11 = ZERO;
        for _ in 0..n {
            let a1 = sample_link_gain(&s1, &mut rng);
            let a2 = sample_link_gain(&s2, &mut rng);
            m1 += a1;
            m2 += a2;
            p1 += a1.norm_sqr();
            cov11 += a1.conj() * a1;
            cross += a1.conj() * a2;
        }
        let nf = n as f64;
        // projected mean equals rho
        assert!((m1 / nf - rho(&s1)).norm() < 0.005 * rho(&s1).norm());
        assert!((m2 / nf - rho(&s2)).norm() < 0.005 * rho(&s2).norm());
        assert!((p1 / nf - 2.0).abs() < 0.005 * 2.0);
        let emp_same = (v1.conjugate() * v1.transpose()) * (cov11 / nf);
        let emp_cross = (v1.conjugate() * v2.transpose()) * (cross / nf);
        let exact_same = covariance_block(&s1, &s1, true, &arr);
        let exact_cross = covariance_block(&s1, &s2, false, &arr);
        assert!(frobenius_rel(&emp_same, &exact_same) < 0.01);
        assert!(frobenius_rel(&emp_cross, &exact_cross) < 0.01);
        // equal seeds, identical draws
        let a = sample_realization(&scsi, &mut rng_from_seed(9));
        let b = sample_realization(&scsi, &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn link_budget_reference_values() {
        let cfg = LinkBudgetConfig::default();
        let noise_dbm = watts_to_dbm(cfg.noise_power_w());
        // 10log10(1.380649e-23 * 290 * 30e3) + 30 + 7
        let oracle = 10.0 * (1.380_649e-23f64 * 290.0 * 30e3).log10() + 30.0 + 7.0;
        assert_relative_eq!(noise_dbm, oracle, epsilon = 1e-9);
        assert!((noise_dbm + 122.2).abs() < 0.05);
        let fspl = fspl_db(600.0, 2e9).unwrap();
        let oracle = 20.0 * (4.0 * PI * 600e3 * 2e9 / 299_792_458.0f64).log10();
        assert_relative_eq!(fspl, oracle, epsilon = 1e-12);
        assert!((fspl - 154.03).abs() < 0.01);
        assert!(fspl_db(0.0, 2e9).is_err());
        let bad = LinkBudgetConfig {
            subcarrier_spacing_hz: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scenario_permutations_roundtrip() {
        let arr = ArrayGeometry::new(1, 2).unwrap();
        let stats: Vec<LinkStat> = (0..6).map(|i| stat(1.0 + i as f64, 2.0, 0.1)).collect();
        let scsi =
            ScenarioScsi::new(3, 2, stats, vec![1.0, 2.0, 3.0], vec![1.0; 3], vec![0.5, 0.7], arr).unwrap();
        let p = scsi.permute_users(&[2, 0, 1]);
        assert_eq!(p.stat(0, 1), scsi.stat(2, 1));
        assert_eq!(p.noise_power[0], 3.0);
        let q = scsi.permute_sats(&[1, 0]);
        assert_eq!(q.stat(1, 0), scsi.stat(1, 1));
        assert_eq!(q.power_budget, vec![0.7, 0.5]);
    }
}
