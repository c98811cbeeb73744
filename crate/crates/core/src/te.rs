//! Closed-form precoding mapping from learned auxiliaries, permutation
//! checks, and scale-invariant losses for training an external network.
//!
//! The mapping takes per-user labels `ā_k = u_k a_k ∈ ℂ^{S+1}` and
//! `ū_k = u_k‖a_k‖²` together with the statistical inputs and rebuilds the
//! precoders without iterating. Entry 0 of `ā_k` is the mean-channel part
//! (`ã`), entries `1..=S` are the per-satellite parts (`Ã`).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{ArrayGeometry, LinkStat, ScenarioScsi};
use crate::error::{Error, Result};
use crate::factorization::build_all_factors;
use crate::linalg::{CVector, C64};
use crate::rates::rate_ap1;
use crate::solvers::{
    per_user_power, project_per_satellite, solve_ms_jocdwm, PrecoderSolution, SolverConfig, SteeringGram, XiContext,
};

/// Regularizer in the SI-NMSE denominator.
pub const SI_NMSE_EPS: f64 = 1e-8;

/// Number of per-link features in the input tensor.
pub const LINK_FEATURES: usize = 5;

/// Statistical inputs in tensor form.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingInputs {
    pub num_users: usize,
    pub num_sats: usize,
    /// `K × S × 5`, row-major; features `[γ, κ, θx, θy, φ̄]`.
    pub d_tensor: Vec<f64>,
    /// `K × 2`, row-major; `[σ², β]`.
    pub f_matrix: Vec<f64>,
    /// Per-satellite budgets.
    pub p_vector: Vec<f64>,
}

impl MappingInputs {
    /// The mean phase factor is stored by its real part; it is real for
    /// zero-mean Gaussian phase errors.
    pub fn from_scsi(scsi: &ScenarioScsi) -> Self {
        let mut d_tensor = Vec::with_capacity(scsi.num_users * scsi.num_sats * LINK_FEATURES);
        for k in 0..scsi.num_users {
            for s in 0..scsi.num_sats {
                let st = scsi.stat(k, s);
                d_tensor.extend_from_slice(&[st.gamma, st.kappa, st.theta_x, st.theta_y, st.mean_phase.re]);
            }
        }
        let f_matrix = (0..scsi.num_users)
            .flat_map(|k| [scsi.noise_power[k], scsi.weights[k]])
            .collect();
        Self {
            num_users: scsi.num_users,
            num_sats: scsi.num_sats,
            d_tensor,
            f_matrix,
            p_vector: scsi.power_budget.clone(),
        }
    }

    pub fn d(&self, k: usize, s: usize, feature: usize) -> f64 {
        self.d_tensor[(k * self.num_sats + s) * LINK_FEATURES + feature]
    }

    fn check(&self) -> Result<()> {
        let (k, s) = (self.num_users, self.num_sats);
        for (len, expected) in [
            (self.d_tensor.len(), k * s * LINK_FEATURES),
            (self.f_matrix.len(), 2 * k),
            (self.p_vector.len(), s),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch { expected, found: len });
            }
        }
        Ok(())
    }

    /// Rebuilds the scenario; the phase variance is recovered as `−2 ln φ̄`.
    pub fn to_scsi(&self, array: ArrayGeometry) -> Result<ScenarioScsi> {
        self.check()?;
        let mut stats = Vec::with_capacity(self.num_users * self.num_sats);
        for k in 0..self.num_users {
            for s in 0..self.num_sats {
                let phi = self.d(k, s, 4);
                if !(phi > 0.0 && phi <= 1.0) {
                    return Err(Error::InvalidInput(format!("mean phase factor {phi} outside (0, 1]")));
                }
                stats.push(LinkStat {
                    gamma: self.d(k, s, 0),
                    kappa: self.d(k, s, 1),
                    theta_x: self.d(k, s, 2),
                    theta_y: self.d(k, s, 3),
                    mean_phase: C64::new(phi, 0.0),
                    phase_var: (-2.0 * phi.ln()).max(0.0),
                });
            }
        }
        ScenarioScsi::new(
            self.num_users,
            self.num_sats,
            stats,
            (0..self.num_users).map(|k| self.f_matrix[2 * k]).collect(),
            (0..self.num_users).map(|k| self.f_matrix[2 * k + 1]).collect(),
            self.p_vector.clone(),
            array,
        )
    }

    /// New user `k` is old user `perm[k]`.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let row = self.num_sats * LINK_FEATURES;
        for (k, &src) in perm.iter().enumerate() {
            out.d_tensor[k * row..(k + 1) * row].copy_from_slice(&self.d_tensor[src * row..(src + 1) * row]);
            out.f_matrix[2 * k..2 * k + 2].copy_from_slice(&self.f_matrix[2 * src..2 * src + 2]);
        }
        out
    }

    /// New satellite `s` is old satellite `perm[s]`, in both the tensor and `p`.
    pub fn permute_sats(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for k in 0..self.num_users {
            for (s, &src) in perm.iter().enumerate() {
                let dst = (k * self.num_sats + s) * LINK_FEATURES;
                let from = (k * self.num_sats + src) * LINK_FEATURES;
                out.d_tensor[dst..dst + LINK_FEATURES].copy_from_slice(&self.d_tensor[from..from + LINK_FEATURES]);
            }
        }
        out.p_vector = perm.iter().map(|&p| self.p_vector[p]).collect();
        out
    }
}

/// Targets of the learned mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingLabels {
    /// `ā_k ∈ ℂ^{S+1}` per user.
    pub a_bar: Vec<CVector>,
    pub u_bar: Vec<f64>,
}

impl MappingLabels {
    pub fn from_aux(aux: &crate::solvers::AuxVars) -> Self {
        let (a_bar, u_bar) = aux.labels();
        Self { a_bar, u_bar }
    }

    pub fn validate(&self, num_users: usize, num_sats: usize) -> Result<()> {
        if self.a_bar.len() != num_users || self.u_bar.len() != num_users {
            return Err(Error::DimensionMismatch {
                expected: num_users,
                found: self.a_bar.len().min(self.u_bar.len()),
            });
        }
        if let Some(a) = self.a_bar.iter().find(|a| a.len() != num_sats + 1) {
            return Err(Error::DimensionMismatch { expected: num_sats + 1, found: a.len() });
        }
        let finite = self.a_bar.iter().flat_map(|a| a.iter()).all(|x| x.re.is_finite() && x.im.is_finite())
            && self.u_bar.iter().all(|u| u.is_finite());
        if !finite {
            return Err(Error::InvalidInput("labels must be finite".into()));
        }
        if self.u_bar.iter().any(|&u| u < 0.0) {
            return Err(Error::InvalidInput("ū must be non-negative".into()));
        }
        Ok(())
    }

    pub fn permute_users(&self, perm: &[usize]) -> Self {
        Self {
            a_bar: perm.iter().map(|&p| self.a_bar[p].clone()).collect(),
            u_bar: perm.iter().map(|&p| self.u_bar[p]).collect(),
        }
    }

    /// Permutes the per-satellite entries; the mean-channel entry stays put.
    pub fn permute_sats(&self, perm: &[usize]) -> Self {
        let a_bar = self
            .a_bar
            .iter()
            .map(|a| {
                let mut out = a.clone();
                for (s, &src) in perm.iter().enumerate() {
                    out[1 + s] = a[1 + src];
                }
                out
            })
            .collect();
        Self { a_bar, u_bar: self.u_bar.clone() }
    }
}

/// Precoders from labels: `w_k = η_k(Ξ_k + β_kū_kσ²_k/P_k I)⁻¹ β_k Q_kᴴ ā_k`,
/// normalized to `P_k = Σp/K` and projected per satellite.
pub fn cfp(labels: &MappingLabels, inputs: &MappingInputs, array: ArrayGeometry, ridge_floor: f64) -> Result<PrecoderSolution> {
    let scsi = inputs.to_scsi(array)?;
    cfp_scsi(labels, &scsi, ridge_floor)
}

/// [`cfp`] on an already assembled scenario.
pub fn cfp_scsi(labels: &MappingLabels, scsi: &ScenarioScsi, ridge_floor: f64) -> Result<PrecoderSolution> {
    labels.validate(scsi.num_users, scsi.num_sats)?;
    let factors = build_all_factors(scsi)?;
    let gram = SteeringGram::worthwhile(scsi.num_users, scsi.array.n_t()).then(|| SteeringGram::new(&factors));
    let k_all = scsi.num_users;
    let beta = &scsi.weights;
    let lambda: Vec<f64> = (0..k_all).map(|k| beta[k] * labels.u_bar[k]).collect();
    let p_k = vec![per_user_power(scsi); k_all];
    let mu: Vec<f64> = (0..k_all).map(|k| lambda[k] * scsi.noise_power[k] / p_k[k]).collect();
    let rhs: Vec<CVector> = (0..k_all).map(|k| &labels.a_bar[k] * C64::from(beta[k])).collect();
    let ctx = XiContext::new(&factors, lambda, gram.as_ref(), ridge_floor)?;
    let updates = ctx.solve_all(&rhs, &mu, &p_k)?;
    let mut sol = PrecoderSolution::zeros(k_all, scsi.stacked_len());
    for (k, c) in updates.into_iter().enumerate() {
        sol.w[k] = c.w;
        sol.eta[k] = c.eta;
        sol.inactive[k] = c.inactive;
        sol.per_user_power[k] = p_k[k];
    }
    project_per_satellite(&mut sol, &scsi.power_budget, scsi.array.n_t());
    Ok(sol)
}

/// Choice of the scalar `ξ` aligning a prediction with its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiConvention {
    /// `ξ = ⟨X̂, X⟩/⟨X, X⟩`.
    Printed,
    /// `ξ = ⟨X̂, X⟩/⟨X̂, X̂⟩`, the minimizer of `‖X − ξX̂‖`.
    LeastSquares,
}

fn check_shapes(x_hat: &[C64], x: &[C64]) -> Result<()> {
    if x_hat.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: x_hat.len() });
    }
    Ok(())
}

/// `‖X − ξX̂‖²/(‖X‖² + ε)` on vectorized inputs, with `⟨A, B⟩ = Σ a*b`.
pub fn si_nmse(x_hat: &[C64], x: &[C64], convention: XiConvention) -> Result<f64> {
    check_shapes(x_hat, x)?;
    let inner: C64 = x_hat.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
    let xx: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    let hh: f64 = x_hat.iter().map(|v| v.norm_sqr()).sum();
    let denom = match convention {
        XiConvention::Printed => xx,
        XiConvention::LeastSquares => hh,
    };
    let xi = if denom > 0.0 { inner / denom } else { C64::new(0.0, 0.0) };
    let err: f64 = x.iter().zip(x_hat).map(|(b, a)| (b - xi * a).norm_sqr()).sum();
    Ok(err / (xx + SI_NMSE_EPS))
}

/// `|vec(X̂)ᴴvec(X)|/(‖X̂‖‖X‖)`; zero-norm inputs are rejected.
pub fn vcossim(x_hat: &[C64], x: &[C64]) -> Result<f64> {
    check_shapes(x_hat, x)?;
    let nh = x_hat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nx = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if nh == 0.0 || nx == 0.0 {
        return Err(Error::InvalidInput("cosine similarity of a zero vector".into()));
    }
    let inner: C64 = x_hat.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
    Ok((inner.norm() / (nh * nx)).min(1.0))
}

/// Batch loss `−(1/N) Σ_n [c·(1/K)Σ_k ℓ(ā_k) + (1−c)·ℓ(ū)]` with `ℓ` the SI-NMSE.
///
/// The overall sign follows the published expression; a trainer that
/// minimizes SI-NMSE should negate it.
pub fn training_loss(
    predicted: &[MappingLabels],
    target: &[MappingLabels],
    c: f64,
    convention: XiConvention,
) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: predicted.len() });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(target) {
        if p.a_bar.len() != t.a_bar.len() {
            return Err(Error::DimensionMismatch { expected: t.a_bar.len(), found: p.a_bar.len() });
        }
        let mut per_user = 0.0;
        for (ph, th) in p.a_bar.iter().zip(&t.a_bar) {
            per_user += si_nmse(ph.as_slice(), th.as_slice(), convention)?;
        }
        per_user /= t.a_bar.len() as f64;
        let to_c = |v: &[f64]| v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>();
        let lu = si_nmse(&to_c(&p.u_bar), &to_c(&t.u_bar), convention)?;
        total += c * per_user + (1.0 - c) * lu;
    }
    Ok(-total / predicted.len() as f64)
}

/// Which mapping to test for permutation equivariance.
#[derive(Debug, Clone, Copy)]
pub enum Mapping<'a> {
    /// The iterative joint solver; its labels are checked too.
    Joint(&'a SolverConfig),
    /// The closed-form mapping with the given labels, permuted alongside.
    Cfp(&'a MappingLabels, f64),
}

/// Largest discrepancies between "permute then map" and "map then permute".
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EquivarianceReport {
    /// Absolute change of the weighted sum rate.
    pub rate_gap: f64,
    /// Largest entry-wise precoder difference over the largest precoder norm.
    pub precoder_gap: f64,
    /// Same for `ā`, relative to its largest norm (solver only).
    pub a_bar_gap: f64,
    /// Same for `ū` (solver only).
    pub u_bar_gap: f64,
}

impl EquivarianceReport {
    pub fn worst(self, other: Self) -> Self {
        Self {
            rate_gap: self.rate_gap.max(other.rate_gap),
            precoder_gap: self.precoder_gap.max(other.precoder_gap),
            a_bar_gap: self.a_bar_gap.max(other.a_bar_gap),
            u_bar_gap: self.u_bar_gap.max(other.u_bar_gap),
        }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.rate_gap <= tol && self.precoder_gap <= tol && self.a_bar_gap <= tol && self.u_bar_gap <= tol
    }
}

struct Mapped {
    sol: PrecoderSolution,
    labels: Option<MappingLabels>,
    rate: f64,
}

fn run_mapping(mapping: Mapping<'_>, scsi: &ScenarioScsi, labels_perm: Option<&MappingLabels>) -> Result<Mapped> {
    let (sol, labels) = match mapping {
        Mapping::Joint(cfg) => {
            let (sol, trace) = solve_ms_jocdwm(scsi, cfg)?;
            (sol, trace.final_aux.as_ref().map(MappingLabels::from_aux))
        }
        Mapping::Cfp(labels, ridge) => (cfp_scsi(labels_perm.unwrap_or(labels), scsi, ridge)?, None),
    };
    let factors = build_all_factors(scsi)?;
    let rate = rate_ap1(&sol.w, scsi, &factors)?.sum_rate;
    Ok(Mapped { sol, labels, rate })
}

fn max_gap(a: &[CVector], b: &[CVector]) -> f64 {
    let scale = a.iter().chain(b).map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let diff = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max);
    diff / scale
}

/// Compares `map(π·inputs)` with `π·map(inputs)` for a user permutation
/// followed by a satellite permutation.
pub fn check_equivariance(
    mapping: Mapping<'_>,
    scsi: &ScenarioScsi,
    perm_users: &[usize],
    perm_sats: &[usize],
) -> Result<EquivarianceReport> {
    check_permutation(perm_users, scsi.num_users)?;
    check_permutation(perm_sats, scsi.num_sats)?;
    let n_t = scsi.array.n_t();
    let base = run_mapping(mapping, scsi, None)?;
    let permuted_scsi = scsi.permute_users(perm_users).permute_sats(perm_sats);
    let permuted_labels = match mapping {
        Mapping::Cfp(l, _) => Some(l.permute_users(perm_users).permute_sats(perm_sats)),
        Mapping::Joint(_) => None,
    };
    let moved = run_mapping(mapping, &permuted_scsi, permuted_labels.as_ref())?;
    let expected = base.sol.permute_users(perm_users).permute_sats(perm_sats, n_t);
    let mut report = EquivarianceReport {
        rate_gap: (moved.rate - base.rate).abs(),
        precoder_gap: max_gap(&moved.sol.w, &expected.w),
        ..Default::default()
    };
    if let (Some(b), Some(m)) = (&base.labels, &moved.labels) {
        let exp = b.permute_users(perm_users).permute_sats(perm_sats);
        report.a_bar_gap = max_gap(&m.a_bar, &exp.a_bar);
        let scale = exp.u_bar.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        report.u_bar_gap = m.u_bar.iter().zip(&exp.u_bar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
    }
    Ok(report)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: perm.len() });
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Worst report over `n_trials` random user and satellite permutations.
pub fn check_equivariance_random<R: Rng + ?Sized>(
    mapping: Mapping<'_>,
    scsi: &ScenarioScsi,
    n_trials: usize,
    rng: &mut R,
) -> Result<EquivarianceReport> {
    let mut worst = EquivarianceReport::default();
    for _ in 0..n_trials {
        let pk = random_permutation(scsi.num_users, rng);
        let ps = random_permutation(scsi.num_sats, rng);
        worst = worst.worst(check_equivariance(mapping, scsi, &pk, &ps)?);
    }
    Ok(worst)
}
