//! Low-rank factors of the per-user channel covariances.
//!
//! For user `k` the stacked covariance `Ω_k` equals `Q_kᴴQ_k` with
//! `Q_k ∈ ℂ^{(S+1)×S·N_T}`: row 0 is the stacked mean channel and row `s`
//! holds `c_s v_sᵀ` in block `s` only, with `|c_s|² = γ_s − |ρ_s|²`. The
//! block-diagonal `Ω̃_k = Q̃_kᴴQ̃_k` uses rows `t_s v_sᵀ` with `|t_s|² = γ_s`.
//! Neither dense matrix is formed on the solver path: everything goes
//! through the per-block projections `v_sᵀ w_s`.

use crate::channel::{rho, ScenarioScsi};
use crate::error::{Error, Result};
use crate::linalg::{dotu, is_hermitian, CMatrix, CVector, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadKind {
    /// `wᴴΩw = ‖Qw‖²`.
    Full,
    /// `wᴴΩ̃w = ‖Q̃w‖²`.
    Block,
}

/// Factors of `Ω_k` and `Ω̃_k` for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactors {
    pub n_t: usize,
    /// Steering vectors `v_{s,k}`.
    pub steering: Vec<CVector>,
    pub gamma: Vec<f64>,
    pub rho: Vec<C64>,
    /// Block-row coefficients `c_s = ϰ_s ρ_s` (or `√γ_s` when `ρ_s = 0`).
    pub c: Vec<C64>,
    /// Block-diagonal coefficients `t_s = ϰ̃_s ρ_s` (or `√γ_s` when `ρ_s = 0`).
    pub t: Vec<C64>,
    pub varkappa: Vec<f64>,
    pub varkappa_tilde: Vec<f64>,
}

impl CovarianceFactors {
    pub fn num_sats(&self) -> usize {
        self.steering.len()
    }

    pub fn stacked_len(&self) -> usize {
        self.num_sats() * self.n_t
    }

    fn check_len(&self, w: &CVector) -> Result<()> {
        if w.len() != self.stacked_len() {
            return Err(Error::DimensionMismatch {
                expected: self.stacked_len(),
                found: w.len(),
            });
        }
        Ok(())
    }

    /// Per-block projections `v_sᵀ w_s`.
    pub fn projections(&self, w: &CVector) -> Vec<C64> {
        let n = self.n_t;
        self.steering
            .iter()
            .enumerate()
            .map(|(s, v)| dotu(v.as_slice(), &w.as_slice()[s * n..(s + 1) * n]))
            .collect()
    }

    /// `Q w` from precomputed projections.
    pub fn q_from_projections(&self, p: &[C64]) -> CVector {
        let s = self.num_sats();
        let mut out = CVector::zeros(s + 1);
        out[0] = self.rho.iter().zip(p).map(|(r, x)| r * x).sum();
        for i in 0..s {
            out[i + 1] = self.c[i] * p[i];
        }
        out
    }

    pub fn apply_q(&self, w: &CVector) -> Result<CVector> {
        self.check_len(w)?;
        Ok(self.q_from_projections(&self.projections(w)))
    }

    pub fn apply_q_tilde(&self, w: &CVector) -> Result<CVector> {
        self.check_len(w)?;
        let p = self.projections(w);
        Ok(CVector::from_iterator(p.len(), self.t.iter().zip(&p).map(|(t, x)| t * x)))
    }

    /// Per-block coefficients `b_s` such that `(Qᴴr)_s = v_s* b_s`.
    pub fn qh_coefficients(&self, r: &CVector) -> Vec<C64> {
        (0..self.num_sats())
            .map(|s| self.rho[s].conj() * r[0] + self.c[s].conj() * r[s + 1])
            .collect()
    }

    /// `Qᴴ r` for `r ∈ ℂ^{S+1}`.
    pub fn apply_qh(&self, r: &CVector) -> Result<CVector> {
        if r.len() != self.num_sats() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.num_sats() + 1,
                found: r.len(),
            });
        }
        let b = self.qh_coefficients(r);
        let mut out = CVector::zeros(self.stacked_len());
        for (s, v) in self.steering.iter().enumerate() {
            for i in 0..self.n_t {
                out[s * self.n_t + i] = v[i].conj() * b[s];
            }
        }
        Ok(out)
    }

    /// `wᴴΩw` or `wᴴΩ̃w` in `O(S·N_T)`.
    pub fn quad_form(&self, w: &CVector, which: QuadKind) -> Result<f64> {
        self.check_len(w)?;
        let p = self.projections(w);
        Ok(self.quad_from_projections(&p, which))
    }

    pub fn quad_from_projections(&self, p: &[C64], which: QuadKind) -> f64 {
        match which {
            QuadKind::Full => self.q_from_projections(p).norm_squared(),
            QuadKind::Block => self.gamma.iter().zip(p).map(|(g, x)| g * x.norm_sqr()).sum(),
        }
    }

    /// Stacked mean channel row `E{h̄ᵀ}` applied to `w`.
    pub fn mean_response(&self, p: &[C64]) -> C64 {
        self.rho.iter().zip(p).map(|(r, x)| r * x).sum()
    }

    pub fn dense_q(&self) -> CMatrix {
        let (s, n) = (self.num_sats(), self.n_t);
        let mut q = CMatrix::zeros(s + 1, s * n);
        for (b, v) in self.steering.iter().enumerate() {
            for i in 0..n {
                q[(0, b * n + i)] = self.rho[b] * v[i];
                q[(b + 1, b * n + i)] = self.c[b] * v[i];
            }
        }
        q
    }

    pub fn dense_q_tilde(&self) -> CMatrix {
        let (s, n) = (self.num_sats(), self.n_t);
        let mut q = CMatrix::zeros(s, s * n);
        for (b, v) in self.steering.iter().enumerate() {
            for i in 0..n {
                q[(b, b * n + i)] = self.t[b] * v[i];
            }
        }
        q
    }
}

/// Builds the factors for user `k`.
pub fn build_factors(scsi: &ScenarioScsi, k: usize) -> Result<CovarianceFactors> {
    let s_count = scsi.num_sats;
    let mut f = CovarianceFactors {
        n_t: scsi.array.n_t(),
        steering: Vec::with_capacity(s_count),
        gamma: Vec::with_capacity(s_count),
        rho: Vec::with_capacity(s_count),
        c: Vec::with_capacity(s_count),
        t: Vec::with_capacity(s_count),
        varkappa: Vec::with_capacity(s_count),
        varkappa_tilde: Vec::with_capacity(s_count),
    };
    for s in 0..s_count {
        let st = scsi.stat(k, s);
        let r = rho(st);
        let r2 = r.norm_sqr();
        if r2 > st.gamma * (1.0 + 1e-12) {
            return Err(Error::Numerical(format!(
                "link (user {k}, satellite {s}): mean power {r2} exceeds total power {}",
                st.gamma
            )));
        }
        let scatter = (st.gamma - r2).max(0.0);
        let (c, t, vk, vkt) = if r2 > 0.0 {
            let phase = r / r2.sqrt();
            (
                phase * scatter.sqrt(),
                phase * st.gamma.sqrt(),
                (scatter / r2).sqrt(),
                (st.gamma / r2).sqrt(),
            )
        } else {
            let g = C64::from(st.gamma.sqrt());
            (g, g, f64::INFINITY, f64::INFINITY)
        };
        f.steering.push(st.steering(&scsi.array));
        f.gamma.push(st.gamma);
        f.rho.push(r);
        f.c.push(c);
        f.t.push(t);
        f.varkappa.push(vk);
        f.varkappa_tilde.push(vkt);
    }
    Ok(f)
}

pub fn build_all_factors(scsi: &ScenarioScsi) -> Result<Vec<CovarianceFactors>> {
    (0..scsi.num_users).map(|k| build_factors(scsi, k)).collect()
}

/// Dense upper-triangular `L` with `LᴴL = Ω` (reference only).
///
/// Semidefinite inputs receive a diagonal jitter of at most `1e-12·tr(Ω)/n`.
pub fn cholesky_reference(omega: &CMatrix) -> Result<CMatrix> {
    if !is_hermitian(omega, 1e-12) {
        return Err(Error::InvalidInput("matrix is not Hermitian".into()));
    }
    let n = omega.nrows();
    let jitter = 1e-12 * (omega.trace().re / n.max(1) as f64).abs();
    let mut m = omega.clone();
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l().adjoint());
    }
    for i in 0..n {
        m[(i, i)] += jitter;
    }
    m.cholesky()
        .map(|ch| ch.l().adjoint())
        .ok_or_else(|| Error::Numerical("reference Cholesky failed".into()))
}

/// Zero vector of the stacked precoder length.
pub fn zero_precoder(f: &CovarianceFactors) -> CVector {
    CVector::from_element(f.stacked_len(), ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{mean_phase_factor, ArrayGeometry, LinkStat};
    use crate::linalg::frobenius_rel;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use rand::Rng;

    pub(crate) fn random_scsi(seed: u64, k: usize, s: usize, n_v: usize, n_h: usize) -> ScenarioScsi {
        let mut rng = rng_from_seed(seed);
        let stats = (0..k * s)
            .map(|_| {
                let var = rng.random_range(0.0..0.6);
                LinkStat {
                    gamma: rng.random_range(0.2..3.0),
                    kappa: rng.random_range(0.0..20.0),
                    theta_x: rng.random_range(-3.0..3.0),
                    theta_y: rng.random_range(0.1..3.0),
                    mean_phase: mean_phase_factor(var).unwrap(),
                    phase_var: var,
                }
            })
            .collect();
        ScenarioScsi::new(
            k,
            s,
            stats,
            vec![0.5; k],
            vec![1.0; k],
            vec![1.0; s],
            ArrayGeometry::new(n_v, n_h).unwrap(),
        )
        .unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> CVector {
        let mut rng = rng_from_seed(seed);
        CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn scalar_coefficients() {
        let st = LinkStat {
            gamma: 1.0,
            kappa: 1.0,
            theta_x: 0.0,
            theta_y: 1.0,
            mean_phase: C64::new(1.0, 0.0),
            phase_var: 0.0,
        };
        let scsi = ScenarioScsi::new(1, 1, vec![st], vec![1.0], vec![1.0], vec![1.0], ArrayGeometry::new(1, 1).unwrap())
            .unwrap();
        let f = build_factors(&scsi, 0).unwrap();
        assert_relative_eq!(f.varkappa[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.varkappa_tilde[0], 2f64.sqrt(), epsilon = 1e-14);
        let mut los = scsi.clone();
        los.stats[0].kappa = f64::INFINITY;
        assert_eq!(build_factors(&los, 0).unwrap().varkappa[0], 0.0);
    }

    #[test]
    fn factor_identity_on_random_scenarios() {
        for seed in 0..20 {
            let scsi = random_scsi(seed, 2, 1 + (seed as usize % 4), 2, 2);
            for k in 0..2 {
                let f = build_factors(&scsi, k).unwrap();
                let q = f.dense_q();
                let qt = f.dense_q_tilde();
                assert!(frobenius_rel(&(q.adjoint() * &q), &scsi.dense_omega(k)) < 1e-12);
                assert!(frobenius_rel(&(qt.adjoint() * &qt), &scsi.dense_omega_tilde(k)) < 1e-12);
                // row 0 is the mean channel
                let mean = scsi.stacked_mean(k);
                for i in 0..mean.len() {
                    assert!((q[(0, i)] - mean[i]).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rayleigh_links_fall_back_to_pure_covariance() {
        let mut scsi = random_scsi(3, 1, 3, 2, 2);
        for st in &mut scsi.stats {
            st.kappa = 0.0;
        }
        let f = build_factors(&scsi, 0).unwrap();
        assert!(f.rho.iter().all(|r| *r == ZERO));
        let q = f.dense_q();
        assert!(frobenius_rel(&(q.adjoint() * &q), &scsi.dense_omega(0)) < 1e-12);
    }

    #[test]
    fn los_limit_matches_mean_outer_product() {
        let mut scsi = random_scsi(4, 1, 3, 2, 2);
        for st in &mut scsi.stats {
            st.kappa = f64::INFINITY;
            st.phase_var = 0.0;
            st.mean_phase = C64::new(1.0, 0.0);
        }
        let m = scsi.stacked_mean(0);
        let outer = m.conjugate() * m.transpose();
        assert!(frobenius_rel(&scsi.dense_omega(0), &outer) < 1e-9);
    }

    #[test]
    fn quad_forms_and_adjoint() {
        let scsi = random_scsi(5, 2, 3, 2, 3);
        let f = build_factors(&scsi, 1).unwrap();
        let w = random_vec(f.stacked_len(), 1);
        assert_eq!(f.quad_form(&zero_precoder(&f), QuadKind::Full).unwrap(), 0.0);
        let omega = scsi.dense_omega(1);
        let dense = (w.adjoint() * &omega * &w)[(0, 0)].re;
        assert_relative_eq!(f.quad_form(&w, QuadKind::Full).unwrap(), dense, max_relative = 1e-10);
        let omega_t = scsi.dense_omega_tilde(1);
        let dense_t = (w.adjoint() * &omega_t * &w)[(0, 0)].re;
        assert_relative_eq!(f.quad_form(&w, QuadKind::Block).unwrap(), dense_t, max_relative = 1e-10);
        // block quad form is additive over satellites
        let n = f.n_t;
        let parts: f64 = (0..3)
            .map(|s| {
                let mut ws = zero_precoder(&f);
                ws.rows_mut(s * n, n).copy_from(&w.rows(s * n, n));
                f.quad_form(&ws, QuadKind::Block).unwrap()
            })
            .sum();
        assert_relative_eq!(parts, dense_t, max_relative = 1e-12);
        let r = random_vec(4, 2);
        let qh = f.apply_qh(&r).unwrap();
        assert!((qh - f.dense_q().adjoint() * &r).norm() < 1e-12);
        assert!(f.quad_form(&random_vec(3, 1), QuadKind::Full).is_err());
    }

    #[test]
    fn single_link_quad_form() {
        let scsi = random_scsi(6, 1, 1, 3, 3);
        let f = build_factors(&scsi, 0).unwrap();
        let w = f.steering[0].conjugate();
        assert_relative_eq!(f.quad_form(&w, QuadKind::Full).unwrap(), f.gamma[0], max_relative = 1e-12);
    }

    #[test]
    fn reference_cholesky_agrees_with_factors() {
        let eye = CMatrix::identity(4, 4);
        assert!(frobenius_rel(&cholesky_reference(&eye).unwrap(), &eye) < 1e-15);
        let scsi = random_scsi(7, 1, 2, 2, 2);
        let omega = scsi.dense_omega(0);
        let l = cholesky_reference(&omega).unwrap();
        assert!(frobenius_rel(&(l.adjoint() * &l), &omega) < 1e-10);
        let f = build_factors(&scsi, 0).unwrap();
        for i in 0..100 {
            let w = random_vec(8, 100 + i);
            let a = (&l * &w).norm_squared();
            let b = f.quad_form(&w, QuadKind::Full).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.max(1e-12) + 1e-12);
        }
        let mut bad = eye.clone();
        bad[(0, 1)] = C64::new(1.0, 0.0);
        assert!(cholesky_reference(&bad).is_err());
    }
}
