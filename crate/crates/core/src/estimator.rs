//! Two-stage nonconvex estimator: spectral initialization followed by
//! gradient descent on the least-squares loss.
//!
//! Initialization estimates the factor subspace from the off-diagonal part of
//! `AAᵀ` (with `A` the mode-3 unfolding of `p⁻¹T^obs`), retrieves individual
//! factor directions by projecting random Gaussian vectors onto that subspace
//! and taking the leading singular vector of `p⁻¹T^obs ×₃ θ`, and prunes the
//! resulting candidates by spectral gap.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::rng::{stream, Stream};
use crate::tensor::{cubic_form, loss_and_gradient, tvp_mode3, FactorMatrix, ObservationSet};

/// Number of times initialization is retried with a doubled restart count.
pub const INIT_RETRIES: usize = 3;

/// Tuning parameters of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    /// Number of random restarts `L` used to retrieve factor candidates.
    pub restarts: usize,
    /// Pruning threshold: candidates with `|⟨ν, w⟩| > 1 − eps_th` are dropped.
    pub eps_th: f64,
    /// Constant step size; see [`gd_refine`] for the gradient scaling.
    pub eta: f64,
    /// Number of gradient iterations `t₀`.
    pub iterations: usize,
    /// Stop once `‖∇f‖_F < 1e-12·‖U‖_F`.
    pub early_stop: bool,
}

impl EstimatorParams {
    pub fn validate(&self, r: usize) -> Result<()> {
        if self.restarts < r {
            return Err(Error::InvalidParameter("restart count must be at least the rank"));
        }
        if !(self.eps_th > 0.0 && self.eps_th < 1.0) {
            return Err(Error::InvalidParameter("pruning threshold must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter("step size must be positive"));
        }
        Ok(())
    }
}

/// `L = r²`, `ε_th = 0.4`, `η = 3·10⁻⁵/p`, `t₀ = 100`.
///
/// The theoretical choices `L ∝ r^{2κ²} log^{3/2} d` and
/// `η ∝ λ_min^{4/3} / (p λ_max^{8/3})` carry unspecified constants and are
/// not used.
pub fn default_params(_d: usize, r: usize, p: f64) -> EstimatorParams {
    EstimatorParams {
        restarts: r * r,
        eps_th: 0.4,
        eta: 3e-5 / p,
        iterations: 100,
        early_stop: false,
    }
}

/// One retrieved factor direction with its strength and spectral gap.
#[derive(Debug, Clone, PartialEq)]
pub struct InitCandidate {
    pub direction: DVector<f64>,
    pub strength: f64,
    pub spec_gap: f64,
}

/// `B = P_offdiag(AAᵀ)` where `A = unfold(p⁻¹ T^obs)`.
pub fn offdiag_gram(obs: &ObservationSet) -> DMatrix<f64> {
    let d = obs.d();
    // (column of A, row of A, value)
    let mut cols: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * obs.len());
    for &(t, v) in obs.entries() {
        for [a, b, c] in t.orbit() {
            cols.push((a * d + b, c, v));
        }
    }
    cols.sort_unstable_by_key(|e| (e.0, e.1));
    let mut b = DMatrix::zeros(d, d);
    for group in cols.chunk_by(|x, y| x.0 == y.0) {
        for (n, &(_, k1, v1)) in group.iter().enumerate() {
            for &(_, k2, v2) in &group[n + 1..] {
                b[(k1, k2)] += v1 * v2;
                b[(k2, k1)] += v1 * v2;
            }
        }
    }
    b / (obs.p() * obs.p())
}

/// Top-`r` eigenvectors of [`offdiag_gram`], as orthonormal columns.
pub fn spectral_subspace(obs: &ObservationSet, r: usize) -> Result<DMatrix<f64>> {
    if r == 0 || r > obs.d() {
        return Err(Error::InvalidParameter("need 1 <= r <= d"));
    }
    if obs.is_empty() {
        return Err(Error::InvalidParameter("no observations"));
    }
    let (_, vectors) = sym_eigen_desc(&offdiag_gram(obs))?;
    Ok(vectors.columns(0, r).into_owned())
}

/// Retrieves one factor candidate from the projection of `g` onto `u_space`.
///
/// A zero slice matrix yields a rejected candidate with zero strength and gap.
pub fn retrieve_one_factor(
    obs: &ObservationSet,
    u_space: &DMatrix<f64>,
    g: &DVector<f64>,
) -> Result<InitCandidate> {
    let d = obs.d();
    if u_space.nrows() != d || g.len() != d {
        return Err(Error::DimensionMismatch("subspace or probe vector has wrong length"));
    }
    let theta = u_space * (u_space.transpose() * g);
    let m = tvp_mode3(obs, &theta) / obs.p();
    if m.iter().all(|v| *v == 0.0) {
        let mut direction = DVector::zeros(d);
        direction[0] = 1.0;
        return Ok(InitCandidate { direction, strength: 0.0, spec_gap: 0.0 });
    }
    // M is symmetric: singular values are |eigenvalues|.
    let (values, vectors) = sym_eigen_desc(&m)?;
    let mut by_magnitude: Vec<usize> = (0..d).collect();
    by_magnitude.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let lead = by_magnitude[0];
    let s1 = values[lead].abs();
    let s2 = by_magnitude.get(1).map_or(0.0, |&i| values[i].abs());
    let mut direction = vectors.column(lead).into_owned();
    let mut form = cubic_form(obs, &direction);
    if form < 0.0 {
        direction.neg_mut();
        form = -form;
    }
    Ok(InitCandidate { direction, strength: (form / obs.p()).max(0.0), spec_gap: s1 - s2 })
}

/// Greedily picks `r` candidates by largest spectral gap, discarding after each
/// pick every candidate with `|⟨ν, w⟩| > 1 − eps_th`. Zero-strength candidates
/// are never picked.
pub fn prune(candidates: &[InitCandidate], eps_th: f64, r: usize) -> Result<Vec<InitCandidate>> {
    let mut pool: Vec<&InitCandidate> = candidates.iter().filter(|c| c.strength > 0.0).collect();
    let mut picked = Vec::with_capacity(r);
    while picked.len() < r {
        let Some(best) = pool
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (n, c)| match acc {
                Some((_, gap)) if gap >= c.spec_gap => acc,
                _ => Some((n, c.spec_gap)),
            })
            .map(|(n, _)| pool[n])
        else {
            return Err(Error::InitExhausted { picked: picked.len(), needed: r });
        };
        pool.retain(|c| c.direction.dot(&best.direction).abs() <= 1.0 - eps_th);
        picked.push(best.clone());
    }
    Ok(picked)
}

/// Spectral initialization `U⁰ = [λ₁^{1/3} w¹, …, λ_r^{1/3} w^r]`.
///
/// When pruning runs out of candidates the restart count is doubled and the
/// probes are redrawn from a fresh stream, up to [`INIT_RETRIES`] times.
pub fn spectral_init(
    obs: &ObservationSet,
    r: usize,
    params: &EstimatorParams,
    seed: u64,
) -> Result<FactorMatrix> {
    params.validate(r)?;
    let d = obs.d();
    let u_space = spectral_subspace(obs, r)?;
    let mut last_err = Error::InitExhausted { picked: 0, needed: r };
    for attempt in 0..=INIT_RETRIES {
        let restarts = params.restarts << attempt;
        let mut rng = stream(seed, Stream::Init, attempt as u64);
        let mut candidates = Vec::with_capacity(restarts);
        for _ in 0..restarts {
            let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            candidates.push(retrieve_one_factor(obs, &u_space, &g)?);
        }
        match prune(&candidates, params.eps_th, r) {
            Ok(picked) => {
                let m = DMatrix::from_fn(d, r, |i, l| {
                    libm::cbrt(picked[l].strength) * picked[l].direction[i]
                });
                return FactorMatrix::new(m);
            }
            Err(e @ Error::InitExhausted { .. }) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// Output of gradient refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub factors: FactorMatrix,
    /// Loss before every iteration, plus the final loss.
    pub losses: Vec<f64>,
}

/// Runs `t₀` iterations of `U ← U − (η/6)·∇f(U)`.
///
/// `∇f/6` is the gradient with each observed orbit counted once on average
/// over its six index orderings; the default step `3·10⁻⁵/p` is expressed in
/// these units. Stepping along the full-closure `∇f` with that step diverges
/// once `‖u_l‖₂⁴·η·p` exceeds roughly 1/9.
pub fn gd_refine(
    obs: &ObservationSet,
    u0: &FactorMatrix,
    params: &EstimatorParams,
) -> Result<Refinement> {
    let mut u = u0.as_matrix().clone();
    let mut losses = Vec::with_capacity(params.iterations + 1);
    for iteration in 0..params.iterations {
        let current = FactorMatrix::new(u.clone()).map_err(|_| Error::NonFinite { iteration })?;
        let (f, grad) = loss_and_gradient(&current, obs)?;
        if !f.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }
        losses.push(f);
        if params.early_stop && grad.norm() < 1e-12 * u.norm() {
            let factors = FactorMatrix::new(u)?;
            return Ok(Refinement { factors, losses });
        }
        u -= grad * (params.eta / 6.0);
    }
    let iteration = params.iterations;
    let factors = FactorMatrix::new(u).map_err(|_| Error::NonFinite { iteration })?;
    let (f, _) = loss_and_gradient(&factors, obs)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration });
    }
    losses.push(f);
    Ok(Refinement { factors, losses })
}

/// Result of the full pipeline. Tensor entries are served by
/// [`FactorMatrix::cp_eval`] on `factors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub initial: FactorMatrix,
    pub factors: FactorMatrix,
    pub losses: Vec<f64>,
}

/// Spectral initialization followed by gradient refinement.
pub fn complete(
    obs: &ObservationSet,
    r: usize,
    params: &EstimatorParams,
    seed: u64,
) -> Result<Completion> {
    let initial = spectral_init(obs, r, params, seed)?;
    let Refinement { factors, losses } = gd_refine(obs, &initial, params)?;
    Ok(Completion { initial, factors, losses })
}
