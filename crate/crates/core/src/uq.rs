//! Uncertainty quantification: plug-in and oracle slice covariances, entry
//! variances, confidence intervals, permutation alignment, entry-strength
//! screening and Cramér–Rao reference values.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::normal::two_sided_critical;
use crate::synth::NoiseSpec;
use crate::tensor::{canonical_triples, CanonicalTriple, FactorMatrix, ObservationSet};

/// Largest condition number of the lifted Gram matrix accepted before
/// reporting [`Error::SingularGram`].
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Variances below this are treated as round-off and clamped to zero.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Plugin,
    Oracle,
}

/// Covariance `Σ_k` of row `k` of the factor estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub k: usize,
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryVariance {
    pub triple: CanonicalTriple,
    pub value: f64,
    pub provenance: Provenance,
}

/// `[center ± half_width]` at confidence level `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Column matching between an estimate and a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationMap {
    /// `mapping[l]` is the estimate column matched to reference column `l`.
    pub mapping: Vec<usize>,
    /// `‖UΠ − U_ref‖_F` at the optimum.
    pub residual: f64,
}

impl PermutationMap {
    /// Inverse map: reference column matched to estimate column `s`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.mapping.len()];
        for (l, &s) in self.mapping.iter().enumerate() {
            inv[s] = l;
        }
        inv
    }
}

/// Residuals `Ê = T^obs − T` on the observed triples, as an observation set
/// over the same index set.
pub fn estimate_noise(obs: &ObservationSet, u: &FactorMatrix) -> Result<ObservationSet> {
    if u.d() != obs.d() {
        return Err(Error::DimensionMismatch("factor dimension differs from observation dimension"));
    }
    let values: Vec<f64> = obs.entries().iter().map(|&(t, v)| v - u.cp_eval(t)).collect();
    obs.with_values(&values)
}

/// Accumulates `Σ w_t ũ_{ab} ũ_{ab}ᵀ` into slice `c` for every ordered
/// position `(a, b, c)` in the orbit of each weighted triple. With `only`
/// set, slices other than `only` are skipped.
fn accumulate_slices(
    u: &FactorMatrix,
    weighted: impl Iterator<Item = (CanonicalTriple, f64)>,
    only: Option<usize>,
) -> Vec<DMatrix<f64>> {
    let (d, r) = (u.d(), u.r());
    let mut slices = vec![DMatrix::zeros(r, r); if only.is_some() { 1 } else { d }];
    for (t, w) in weighted {
        if w == 0.0 {
            continue;
        }
        for [a, b, c] in t.orbit() {
            let slot = match only {
                Some(k) if k == c => 0,
                Some(_) => continue,
                None => c,
            };
            let lifted = u.lifted_row(a, b);
            slices[slot].ger(w, &lifted, &lifted, 1.0);
        }
    }
    slices
}

fn sandwich(ginv: &DMatrix<f64>, s: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let m = ginv * s * ginv * (2.0 / p);
    (&m + m.transpose()) * 0.5
}

fn check_slice(k: usize, d: usize) -> Result<()> {
    if k >= d {
        return Err(Error::InvalidParameter("slice index out of range"));
    }
    Ok(())
}

/// Plug-in covariances `Σ_k = (2/p) G⁻¹ Ũᵀ D_k Ũ G⁻¹` for every slice, with
/// `G = ŨᵀŨ` and `(D_k)_{(i,j)} = p⁻¹ Ê²_{i,j,k}` on observed positions.
pub fn estimate_sigmas(
    u: &FactorMatrix,
    residuals: &ObservationSet,
) -> Result<Vec<CovarianceEstimate>> {
    let p = residuals.p();
    let ginv = spd_inverse(&u.gram_lifted(), MAX_GRAM_CONDITION)?;
    let weighted = residuals.entries().iter().map(|&(t, e)| (t, e * e / p));
    Ok(accumulate_slices(u, weighted, None)
        .iter()
        .enumerate()
        .map(|(k, s)| CovarianceEstimate {
            k,
            matrix: sandwich(&ginv, s, p),
            provenance: Provenance::Plugin,
        })
        .collect())
}

/// Plug-in covariance of a single slice; see [`estimate_sigmas`].
pub fn estimate_sigma_k(
    u: &FactorMatrix,
    residuals: &ObservationSet,
    k: usize,
) -> Result<CovarianceEstimate> {
    check_slice(k, u.d())?;
    let p = residuals.p();
    let ginv = spd_inverse(&u.gram_lifted(), MAX_GRAM_CONDITION)?;
    let weighted = residuals.entries().iter().map(|&(t, e)| (t, e * e / p));
    let s = accumulate_slices(u, weighted, Some(k));
    Ok(CovarianceEstimate { k, matrix: sandwich(&ginv, &s[0], p), provenance: Provenance::Plugin })
}

/// Oracle covariances `Σ*_k` from the true factors and noise variances.
pub fn oracle_sigmas(truth: &FactorMatrix, noise: &NoiseSpec, p: f64) -> Result<Vec<CovarianceEstimate>> {
    if noise.d != truth.d() {
        return Err(Error::DimensionMismatch("noise dimension differs from factor dimension"));
    }
    let ginv = spd_inverse(&truth.gram_lifted(), MAX_GRAM_CONDITION)?;
    let weighted = canonical_triples(truth.d()).zip(noise.variances().iter().copied());
    Ok(accumulate_slices(truth, weighted, None)
        .iter()
        .enumerate()
        .map(|(k, s)| CovarianceEstimate {
            k,
            matrix: sandwich(&ginv, s, p),
            provenance: Provenance::Oracle,
        })
        .collect())
}

/// Oracle covariance of a single slice; see [`oracle_sigmas`].
pub fn oracle_sigma_k(
    truth: &FactorMatrix,
    noise: &NoiseSpec,
    p: f64,
    k: usize,
) -> Result<CovarianceEstimate> {
    check_slice(k, truth.d())?;
    if noise.d != truth.d() {
        return Err(Error::DimensionMismatch("noise dimension differs from factor dimension"));
    }
    let ginv = spd_inverse(&truth.gram_lifted(), MAX_GRAM_CONDITION)?;
    let weighted = canonical_triples(truth.d()).zip(noise.variances().iter().copied());
    let s = accumulate_slices(truth, weighted, Some(k));
    Ok(CovarianceEstimate { k, matrix: sandwich(&ginv, &s[0], p), provenance: Provenance::Oracle })
}

fn quad(u: &FactorMatrix, a: usize, b: usize, sigma: &DMatrix<f64>) -> f64 {
    let lifted: DVector<f64> = u.lifted_row(a, b);
    lifted.dot(&(sigma * &lifted))
}

/// Asymptotic variance of the tensor-entry estimate at `t`.
///
/// `sigmas[k]` must be the covariance of slice `k`. Distinct indices sum three
/// quadratic forms; a repeated index carries weight 4 on the paired slice and
/// a fully diagonal entry weight 9.
pub fn entry_variance(
    u: &FactorMatrix,
    sigmas: &[CovarianceEstimate],
    t: CanonicalTriple,
) -> Result<EntryVariance> {
    if sigmas.len() != u.d() {
        return Err(Error::DimensionMismatch("need one covariance per slice"));
    }
    let (i, j, k) = (t.i(), t.j(), t.k());
    let s = |n: usize| &sigmas[n].matrix;
    let value = match (i == j, j == k) {
        (true, true) => 9.0 * quad(u, i, i, s(i)),
        // (i, i, k)
        (true, false) => 4.0 * quad(u, i, k, s(i)) + quad(u, i, i, s(k)),
        // (i, k, k) is (k, k, i)
        (false, true) => 4.0 * quad(u, k, i, s(k)) + quad(u, k, k, s(i)),
        (false, false) => quad(u, j, k, s(i)) + quad(u, i, k, s(j)) + quad(u, i, j, s(k)),
    };
    Ok(EntryVariance { triple: t, value: value.max(0.0), provenance: sigmas[0].provenance })
}

fn interval(center: f64, variance: f64, alpha: f64) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter("alpha must lie in (0, 1]"));
    }
    if variance < -NEGATIVE_VARIANCE_TOLERANCE || variance.is_nan() {
        return Err(Error::NegativeVariance { value: variance });
    }
    let half_width = two_sided_critical(alpha) * libm::sqrt(variance.max(0.0));
    Ok(ConfidenceInterval { center, half_width, level: 1.0 - alpha })
}

/// Interval `[u_{l,k} ± Φ⁻¹(1−α/2)·√(Σ_k)_{l,l}]`.
pub fn ci_factor(
    u_lk: f64,
    sigma_k: &CovarianceEstimate,
    l: usize,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    if l >= sigma_k.matrix.nrows() {
        return Err(Error::InvalidParameter("factor index out of range"));
    }
    interval(u_lk, sigma_k.matrix[(l, l)], alpha)
}

/// Interval `[T_{i,j,k} ± Φ⁻¹(1−α/2)·√v_{i,j,k}]`.
pub fn ci_entry(t_ijk: f64, v: &EntryVariance, alpha: f64) -> Result<ConfidenceInterval> {
    interval(t_ijk, v.value, alpha)
}

/// Column permutation minimizing `‖UΠ − U_ref‖_F`: exhaustive for `r ≤ 8`,
/// Hungarian assignment above.
pub fn align_permutation(u: &FactorMatrix, uref: &FactorMatrix) -> Result<PermutationMap> {
    if u.d() != uref.d() || u.r() != uref.r() {
        return Err(Error::DimensionMismatch("factor matrices differ in shape"));
    }
    let r = u.r();
    // cost[s][l] = ‖u_s − uref_l‖²
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|s| {
            (0..r)
                .map(|l| (u.as_matrix().column(s) - uref.as_matrix().column(l)).norm_squared())
                .collect()
        })
        .collect();
    let mapping = if r <= 8 { exhaustive_assignment(&cost) } else { hungarian(&cost) };
    let total: f64 = mapping.iter().enumerate().map(|(l, &s)| cost[s][l]).sum();
    Ok(PermutationMap { mapping, residual: libm::sqrt(total) })
}

/// Lexicographic enumeration of all permutations; first minimum wins.
fn exhaustive_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let r = cost.len();
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = perm.iter().enumerate().map(|(l, &s)| cost[s][l]).sum();
        if c < best_cost {
            best_cost = c;
            best.clone_from(&perm);
        }
        // next permutation
        let Some(i) = (1..r).rev().find(|&i| perm[i - 1] < perm[i]) else {
            break;
        };
        let j = (i..r).rev().find(|&j| perm[j] > perm[i - 1]).unwrap_or(i);
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
    best
}

/// Minimum-cost perfect matching, `O(r³)`. Returns `mapping[l] = s`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // rows: reference columns l, cols: estimate columns s (1-based internally)
    let a = |l: usize, s: usize| cost[s - 1][l - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[p[j] - 1] = j - 1;
    }
    mapping
}

/// `(‖ũ_{jk}‖ + ‖ũ_{ij}‖ + ‖ũ_{ik}‖) / ‖Ũ‖_{2,∞}`, given the precomputed
/// `‖Ũ‖_{2,∞}` (see [`FactorMatrix::lifted_two_inf_norm`]).
pub fn entry_strength(uref: &FactorMatrix, t: CanonicalTriple, two_inf: f64) -> f64 {
    let (i, j, k) = (t.i(), t.j(), t.k());
    let sum = uref.lifted_row(j, k).norm() + uref.lifted_row(i, j).norm() + uref.lifted_row(i, k).norm();
    if two_inf > 0.0 {
        sum / two_inf
    } else {
        0.0
    }
}

/// Whether the entry strength at `t` reaches `tau`.
pub fn entry_strength_ok(uref: &FactorMatrix, t: CanonicalTriple, tau: f64) -> bool {
    tau <= 0.0 || entry_strength(uref, t, uref.lifted_two_inf_norm()) >= tau
}

/// Cramér–Rao reference values for the squared ℓ₂ risks.
#[derive(Debug, Clone, PartialEq)]
pub struct CrBounds {
    /// `2σ²d / (p‖u_l‖⁴)` for each factor.
    pub factor: Vec<f64>,
    /// `6σ²dr / p`.
    pub tensor: f64,
}

pub fn cr_bounds(sigma: f64, p: f64, d: usize, r: usize, uref: &FactorMatrix) -> CrBounds {
    let s2 = sigma * sigma;
    let factor = (0..uref.r())
        .map(|l| {
            let n2 = uref.as_matrix().column(l).norm_squared();
            2.0 * s2 * d as f64 / (p * n2 * n2)
        })
        .collect();
    CrBounds { factor, tensor: 6.0 * s2 * (d * r) as f64 / p }
}
