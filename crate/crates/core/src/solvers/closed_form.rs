//! Regularized per-user solve `(Ξ_k + μI)⁻¹ Qᴴ_k r` and the resulting
//! power-normalized precoder.
//!
//! `Ξ_k = λ_k Ω_k + Σ_{i≠k} λ_i Ω̃_i` splits into a block-diagonal part
//! `M = blkdiag(μI + Σ_{i≠k} λ_i γ_{s,i} v*_{s,i} v_{s,i}ᵀ)` plus the
//! rank-`(S+1)` term `λ_k QᴴQ`. Each block is inverted on the single
//! direction `v*_{s,k}` it is applied to, either by a dense Cholesky of the
//! `N_T × N_T` block or, when users are fewer than antennas, through the
//! `K × K` Gram matrix of the steering vectors. The low-rank term is then
//! handled by an `(S+1)`-dimensional Woodbury correction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factorization::CovarianceFactors;
use crate::linalg::{dotc, hermitian_solve, CMatrix, CVector, C64, ONE, ZERO};

/// Gram matrices `G_s[i, j] = v_{s,i}ᵀ v*_{s,j}` of the conjugated steering
/// vectors, one per satellite. They depend only on the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringGram {
    grams: Vec<CMatrix>,
}

impl SteeringGram {
    pub fn new(factors: &[CovarianceFactors]) -> Self {
        let k = factors.len();
        let s_count = factors.first().map_or(0, |f| f.num_sats());
        let grams = (0..s_count)
            .map(|s| {
                let cols: Vec<CVector> = factors.iter().map(|f| f.steering[s].conjugate()).collect();
                CMatrix::from_fn(k, k, |i, j| dotc(cols[i].as_slice(), cols[j].as_slice()))
            })
            .collect();
        Self { grams }
    }

    /// Whether the Gram path is cheaper than dense blocks.
    pub fn worthwhile(num_users: usize, n_t: usize) -> bool {
        n_t > num_users
    }
}

/// `Ξ_k` for every user `k`, represented by the factors and the weights
/// `λ_i` (`β_i u_i a_iᴴa_i` in the iterative solver, `β_i ū_i` for labels).
pub struct XiContext<'a> {
    factors: &'a [CovarianceFactors],
    lambda: Vec<f64>,
    gram: Option<&'a SteeringGram>,
    ridge_floor: f64,
}

/// Output of one closed-form precoder update.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub w: CVector,
    pub eta: f64,
    pub inactive: bool,
}

impl<'a> XiContext<'a> {
    pub fn new(
        factors: &'a [CovarianceFactors],
        lambda: Vec<f64>,
        gram: Option<&'a SteeringGram>,
        ridge_floor: f64,
    ) -> Result<Self> {
        if lambda.len() != factors.len() {
            return Err(Error::DimensionMismatch {
                expected: factors.len(),
                found: lambda.len(),
            });
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Numerical("Ξ weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            factors,
            lambda,
            gram,
            ridge_floor,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `Ξ_k x` through the factors.
    pub fn apply(&self, k: usize, x: &CVector) -> CVector {
        let f = &self.factors[k];
        let n = f.n_t;
        let qx = f.q_from_projections(&f.projections(x));
        let mut out = CVector::zeros(x.len());
        let b = f.qh_coefficients(&qx);
        let lk = C64::from(self.lambda[k]);
        for (s, v) in f.steering.iter().enumerate() {
            for j in 0..n {
                out[s * n + j] += lk * v[j].conj() * b[s];
            }
        }
        for (i, fi) in self.factors.iter().enumerate() {
            if i == k || self.lambda[i] == 0.0 {
                continue;
            }
            let p = fi.projections(x);
            for (s, v) in fi.steering.iter().enumerate() {
                let coef = C64::from(self.lambda[i] * fi.gamma[s]) * p[s];
                for j in 0..n {
                    out[s * n + j] += v[j].conj() * coef;
                }
            }
        }
        out
    }

    /// Dense `Ξ_k`, for reference solves and tests.
    pub fn dense(&self, k: usize) -> CMatrix {
        let f = &self.factors[k];
        let q = f.dense_q();
        let mut xi = q.adjoint() * q * C64::from(self.lambda[k]);
        let n = f.n_t;
        for (i, fi) in self.factors.iter().enumerate() {
            if i == k {
                continue;
            }
            for (s, v) in fi.steering.iter().enumerate() {
                let blk = v.conjugate() * v.transpose() * C64::from(self.lambda[i] * fi.gamma[s]);
                let mut view = xi.view_mut((s * n, s * n), (n, n));
                view += blk;
            }
        }
        xi
    }

    /// Average diagonal entry of `Ξ_k`, the scale for the ridge floor.
    fn diag_scale(&self, k: usize) -> f64 {
        let f = &self.factors[k];
        let total: f64 = self
            .factors
            .iter()
            .zip(&self.lambda)
            .map(|(fi, l)| l * fi.gamma.iter().sum::<f64>())
            .sum();
        total / f.stacked_len() as f64
    }

    fn effective_mu(&self, k: usize, mu: f64) -> f64 {
        let scale = self.diag_scale(k);
        let floor = self.ridge_floor * scale;
        if mu > floor {
            mu
        } else if floor > 0.0 {
            floor
        } else {
            1.0
        }
    }

    /// `(Ξ_k + μI)⁻¹ Qᴴ_k r` by the structured path.
    pub fn solve(&self, k: usize, mu: f64, r: &CVector) -> Result<CVector> {
        let f = &self.factors[k];
        let s_count = f.num_sats();
        if r.len() != s_count + 1 {
            return Err(Error::DimensionMismatch {
                expected: s_count + 1,
                found: r.len(),
            });
        }
        let mu = self.effective_mu(k, mu);
        let blocks = (0..s_count)
            .map(|s| match self.gram {
                Some(g) => self.block_inverse_gram(k, s, mu, g),
                None => self.block_inverse_dense(k, s, mu),
            })
            .collect::<Result<Vec<_>>>()?;

        // P = Q M⁻¹ Qᴴ in the (S+1)-dimensional row space of Q
        let mut sys = CMatrix::identity(s_count + 1, s_count + 1);
        let lk = self.lambda[k];
        for (s, (_, alpha)) in blocks.iter().enumerate() {
            let (rho, c) = (f.rho[s], f.c[s]);
            let a = C64::from(lk * alpha);
            sys[(0, 0)] += a * rho.norm_sqr();
            sys[(0, s + 1)] += a * rho * c.conj();
            sys[(s + 1, 0)] += a * c * rho.conj();
            sys[(s + 1, s + 1)] += a * c.norm_sqr();
        }
        let z = sys
            .lu()
            .solve(r)
            .ok_or_else(|| Error::Numerical("singular low-rank correction".into()))?;
        let b = f.qh_coefficients(&z);
        let n = f.n_t;
        let mut x = CVector::zeros(s_count * n);
        for (s, (y, _)) in blocks.iter().enumerate() {
            x.rows_mut(s * n, n).copy_from(&(y * b[s]));
        }
        Ok(x)
    }

    /// `(y, α)` with `y = M_s⁻¹ v*_{s,k}` and `α = v_{s,k}ᵀ y`, dense block.
    fn block_inverse_dense(&self, k: usize, s: usize, mu: f64) -> Result<(CVector, f64)> {
        let n = self.factors[k].n_t;
        let mut m = CMatrix::from_diagonal_element(n, n, C64::from(mu));
        for (i, fi) in self.factors.iter().enumerate() {
            let d = self.lambda[i] * fi.gamma[s];
            if i == k || d == 0.0 {
                continue;
            }
            let u = fi.steering[s].conjugate();
            m.ger(C64::from(d), &u, &u.conjugate(), ONE);
        }
        let target = self.factors[k].steering[s].conjugate();
        let y = hermitian_solve(&m, &target, self.ridge_floor)?;
        let alpha = dotc(target.as_slice(), y.as_slice()).re;
        Ok((y, alpha))
    }

    /// Same as [`Self::block_inverse_dense`] through the `K × K` Gram system
    /// `(μI + D G D) z = D G e_k`, `y = (v*_k − Σ_i d_i z_i v*_i)/μ`.
    fn block_inverse_gram(&self, k: usize, s: usize, mu: f64, gram: &SteeringGram) -> Result<(CVector, f64)> {
        let g = &gram.grams[s];
        let kk = self.factors.len();
        let d: Vec<f64> = (0..kk)
            .map(|i| {
                if i == k {
                    0.0
                } else {
                    (self.lambda[i] * self.factors[i].gamma[s]).sqrt()
                }
            })
            .collect();
        let active: Vec<usize> = (0..kk).filter(|&i| d[i] > 0.0).collect();
        let target = self.factors[k].steering[s].conjugate();
        if active.is_empty() {
            let alpha = target.norm_squared() / mu;
            return Ok((target / C64::from(mu), alpha));
        }
        let m = active.len();
        let mut sys = CMatrix::from_fn(m, m, |a, b| g[(active[a], active[b])] * (d[active[a]] * d[active[b]]));
        for a in 0..m {
            sys[(a, a)] += mu;
        }
        let rhs = CVector::from_fn(m, |a, _| g[(active[a], k)] * d[active[a]]);
        let z = hermitian_solve(&sys, &rhs, self.ridge_floor)?;
        let mut y = target.clone();
        for (a, &i) in active.iter().enumerate() {
            let coef = -(z[a] * d[i]);
            let u = &self.factors[i].steering[s];
            for j in 0..y.len() {
                y[j] += coef * u[j].conj();
            }
        }
        y /= C64::from(mu);
        let alpha = ((g[(k, k)] - dotc(rhs.as_slice(), z.as_slice())) / mu).re;
        Ok((y, alpha))
    }

    /// Dense reference for [`Self::solve`].
    pub fn solve_dense(&self, k: usize, mu: f64, r: &CVector) -> Result<CVector> {
        let mu = self.effective_mu(k, mu);
        let mut m = self.dense(k);
        for i in 0..m.nrows() {
            m[(i, i)] += mu;
        }
        let rhs = self.factors[k].apply_qh(r)?;
        hermitian_solve(&m, &rhs, self.ridge_floor)
    }

    /// Closed-form updates for all users with right-hand sides `r[k]` and
    /// regularizers `mu[k]`.
    pub fn solve_all(&self, r: &[CVector], mu: &[f64], p_k: &[f64]) -> Result<Vec<ClosedForm>> {
        (0..self.factors.len())
            .into_par_iter()
            .map(|k| closed_form_precoder(self, k, &r[k], mu[k], p_k[k]))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

/// `w = η(Ξ_k + μI)⁻¹Qᴴ_k r` with `η` chosen so that `‖w‖² = P_k`.
pub fn closed_form_precoder(ctx: &XiContext<'_>, k: usize, r: &CVector, mu: f64, p_k: f64) -> Result<ClosedForm> {
    let n = ctx.factors[k].stacked_len();
    if !(p_k > 0.0) {
        return Err(Error::InvalidInput("per-user power must be positive".into()));
    }
    let inactive = ClosedForm {
        w: CVector::from_element(n, ZERO),
        eta: 0.0,
        inactive: true,
    };
    if r.iter().all(|x| *x == ZERO) {
        return Ok(inactive);
    }
    let x = ctx.solve(k, mu, r)?;
    let nx = x.norm_squared();
    if !nx.is_finite() {
        return Err(Error::Numerical(format!("non-finite precoder for user {k}")));
    }
    if nx == 0.0 {
        return Ok(inactive);
    }
    let eta = (p_k / nx).sqrt();
    Ok(ClosedForm {
        w: x * C64::from(eta),
        eta,
        inactive: false,
    })
}
