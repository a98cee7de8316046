//! Brute-force reference constructions shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorciq_core::tensor::{canonical_triples, CanonicalTriple, FactorMatrix, ObservationSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller keeps the oracle independent of the library's sampler.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_factors(d: usize, r: usize, seed: u64) -> FactorMatrix {
    let mut g = rng(seed);
    FactorMatrix::new(DMatrix::from_fn(d, r, |_, _| normal(&mut g))).unwrap()
}

/// Random observation set with each canonical triple kept with probability `keep`.
pub fn random_obs(d: usize, p: f64, keep: f64, seed: u64) -> ObservationSet {
    let mut g = rng(seed);
    let entries = canonical_triples(d)
        .filter_map(|t| (g.random::<f64>() < keep).then(|| (t, normal(&mut g))))
        .collect();
    ObservationSet::new(d, p, entries).unwrap()
}

/// Full `d×d×d` array of a tensor given on canonical triples (zero elsewhere).
pub fn dense_cube(obs: &ObservationSet) -> Vec<f64> {
    let d = obs.d();
    let mut cube = vec![0.0; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                if let Some(v) = obs.get(a, b, c) {
                    cube[(a * d + b) * d + c] = v;
                }
            }
        }
    }
    cube
}

pub fn mask_cube(obs: &ObservationSet) -> Vec<bool> {
    let d = obs.d();
    let mut cube = vec![false; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                cube[(a * d + b) * d + c] = obs.contains(a, b, c);
            }
        }
    }
    cube
}

/// `Σ_l u_{l,a} u_{l,b} u_{l,c}` by explicit triple loop over factors.
pub fn cp_cube(u: &FactorMatrix) -> Vec<f64> {
    let d = u.d();
    let mut cube = vec![0.0; d * d * d];
    for l in 0..u.r() {
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    cube[(a * d + b) * d + c] += u.get(a, l) * u.get(b, l) * u.get(c, l);
                }
            }
        }
    }
    cube
}

/// Explicit `d² × r` lift with rows `(a, b) ↦ a·d + b` built as Kronecker columns.
pub fn dense_lift(u: &FactorMatrix) -> DMatrix<f64> {
    let d = u.d();
    let mut lift = DMatrix::zeros(d * d, u.r());
    for s in 0..u.r() {
        let col: DVector<f64> = u.as_matrix().column(s).into_owned();
        let kron = col.kronecker(&col);
        lift.set_column(s, &kron);
    }
    lift
}

/// Loss by looping over all `d³` positions of the symmetric closure.
pub fn brute_loss(u: &FactorMatrix, obs: &ObservationSet) -> f64 {
    let cube = dense_cube(obs);
    let mask = mask_cube(obs);
    let model = cp_cube(u);
    cube.iter()
        .zip(&mask)
        .zip(&model)
        .filter(|(( _, m), _)| **m)
        .map(|((v, _), t)| (t - v) * (t - v))
        .sum()
}

pub fn triple(i: usize, j: usize, k: usize) -> CanonicalTriple {
    CanonicalTriple::new(i, j, k)
}

/// Noiseless observations of `Σ u_l^{⊗3}` on a Bernoulli(`p`) mask.
pub fn noiseless_obs(u: &FactorMatrix, p: f64, seed: u64) -> ObservationSet {
    let d = u.d();
    let mut g = rng(seed);
    let entries = canonical_triples(d)
        .filter(|_| p >= 1.0 || g.random::<f64>() < p)
        .map(|t| (t, u.cp_eval(t)))
        .collect();
    ObservationSet::new(d, p, entries).unwrap()
}

/// `‖T(u) − T(v)‖_F / ‖T(v)‖_F` over the full cube.
pub fn tensor_rel_error(u: &FactorMatrix, v: &FactorMatrix) -> f64 {
    let a = cp_cube(u);
    let b = cp_cube(v);
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Minimum of `‖UΠ − V‖_F / ‖V‖_F` over all column permutations, by brute force.
pub fn aligned_rel_error(u: &FactorMatrix, v: &FactorMatrix) -> f64 {
    let best = permutations(u.r())
        .into_iter()
        .map(|perm| (u.select_columns(&perm).as_matrix() - v.as_matrix()).norm())
        .fold(f64::INFINITY, f64::min);
    best / v.as_matrix().norm()
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Projector onto the column span of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// `(2/p) G⁻¹ ŨᵀDŨ G⁻¹` with the `d² × r` lift and the `d² × d²` diagonal
/// `D` built explicitly from per-position weights `w(a, b)`.
pub fn dense_sandwich(u: &FactorMatrix, p: f64, w: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let d = u.d();
    let lift = dense_lift(u);
    let diag = DVector::from_fn(d * d, |n, _| w(n / d, n % d));
    let big_d = DMatrix::from_diagonal(&diag);
    let ginv = (lift.transpose() * &lift).try_inverse().unwrap();
    &ginv * lift.transpose() * big_d * &lift * &ginv * (2.0 / p)
}

/// Plug-in slice covariance with `D_k[(a,b)] = p⁻¹Ê²_{a,b,k}` on observed positions.
pub fn dense_plugin_sigma(u: &FactorMatrix, residuals: &ObservationSet, k: usize) -> DMatrix<f64> {
    let p = residuals.p();
    dense_sandwich(u, p, |a, b| residuals.get(a, b, k).map_or(0.0, |e| e * e / p))
}

/// Oracle slice covariance with `D*_k[(a,b)] = σ²_{a,b,k}` at every position.
pub fn dense_oracle_sigma(
    u: &FactorMatrix,
    noise: &tensorciq_core::synth::NoiseSpec,
    p: f64,
    k: usize,
) -> DMatrix<f64> {
    dense_sandwich(u, p, |a, b| noise.variance_at(a, b, k))
}

/// Delta-method variance of `Σ_l u_{il}u_{jl}u_{kl}`: `Σ_a J_aᵀ Σ_a J_a` with
/// `J_a` the derivative with respect to row `a` of `U`.
pub fn dense_entry_variance(u: &FactorMatrix, sigmas: &[DMatrix<f64>], i: usize, j: usize, k: usize) -> f64 {
    let mut rows = vec![i, j, k];
    rows.sort_unstable();
    rows.dedup();
    rows.into_iter()
        .map(|a| {
            let jac = DVector::from_fn(u.r(), |l, _| {
                let x = |n: usize| u.get(n, l);
                let mut g = 0.0;
                if a == i {
                    g += x(j) * x(k);
                }
                if a == j {
                    g += x(i) * x(k);
                }
                if a == k {
                    g += x(i) * x(j);
                }
                g
            });
            jac.dot(&(&sigmas[a] * &jac))
        })
        .sum()
}

/// Exhaustive minimum of `‖UΠ − V‖_F²` returning `(mapping, cost)`, where
/// `mapping[l]` is the column of `u` matched to column `l` of `v`.
pub fn brute_force_alignment(u: &FactorMatrix, v: &FactorMatrix) -> (Vec<usize>, f64) {
    permutations(u.r())
        .into_iter()
        .map(|perm| {
            let cost = (u.select_columns(&perm).as_matrix() - v.as_matrix()).norm_squared();
            (perm, cost)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}
