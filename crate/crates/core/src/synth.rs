//! Synthetic problem instances: Gaussian ground-truth factors, symmetric
//! Bernoulli sampling, and heteroscedastic Gaussian noise.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream, StreamRng};
use crate::tensor::{canonical_triples, num_canonical, CanonicalTriple, FactorMatrix, ObservationSet};

/// Sizes, sampling rate, noise level and master seed of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceConfig {
    pub d: usize,
    pub r: usize,
    pub p: f64,
    pub sigma: f64,
    pub beta: f64,
    pub seed: u64,
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.d {
            return Err(Error::InvalidParameter("need 1 <= r <= d"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter("sampling rate must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be finite and non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("beta must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-triple noise variances over canonical triples.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub d: usize,
    pub sigma: f64,
    pub beta: f64,
    variances: Vec<f64>,
}

impl NoiseSpec {
    /// Builds from explicit variances in canonical linear-index order.
    pub fn from_variances(d: usize, sigma: f64, beta: f64, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != num_canonical(d) {
            return Err(Error::DimensionMismatch("variance count differs from C(d+2,3)"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("variances must be finite and non-negative"));
        }
        Ok(Self { d, sigma, beta, variances })
    }

    pub fn variance(&self, t: CanonicalTriple) -> f64 {
        self.variances[t.linear_index()]
    }

    pub fn variance_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.variance(CanonicalTriple::new(i, j, k))
    }

    /// Variances in canonical linear-index order.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sigma_min(&self) -> f64 {
        libm::sqrt(self.variances.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn sigma_max(&self) -> f64 {
        libm::sqrt(self.variances.iter().copied().fold(0.0, f64::max))
    }
}

/// Seeds of the four independent generator streams of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceSeeds {
    pub factors: u64,
    pub mask: u64,
    pub weights: u64,
    pub noise: u64,
}

impl InstanceSeeds {
    pub fn from_master(master: u64) -> Self {
        Self::for_trial(master, 0)
    }

    /// Ground truth and variance profile are shared by every trial of a
    /// master seed; the sampling mask and the noise draw are per trial.
    pub fn for_trial(master: u64, trial: u64) -> Self {
        Self {
            factors: derive_seed(master, Stream::Factors, 0),
            weights: derive_seed(master, Stream::Weights, 0),
            mask: derive_seed(master, Stream::Mask, trial),
            noise: derive_seed(master, Stream::Noise, trial),
        }
    }
}

/// A generated problem: truth, observations, noise model and realized noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub truth: FactorMatrix,
    pub obs: ObservationSet,
    pub noise: NoiseSpec,
    /// Realized noise `E` on the observed triples, in the order of `obs.entries()`.
    pub errors: Vec<f64>,
}

/// `d × r` matrix of i.i.d. standard normal entries, filled column by column.
pub fn gen_factors(d: usize, r: usize, seed: u64) -> Result<FactorMatrix> {
    if r == 0 || r > d {
        return Err(Error::InvalidParameter("need 1 <= r <= d"));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(d, r);
    for l in 0..r {
        for i in 0..d {
            m[(i, l)] = rng.sample(StandardNormal);
        }
    }
    FactorMatrix::new(m)
}

/// Includes each canonical triple independently with probability `p`.
pub fn sample_omega(d: usize, p: f64, seed: u64) -> Result<Vec<CanonicalTriple>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter("sampling rate must lie in [0, 1]"));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    Ok(canonical_triples(d).filter(|_| rng.random::<f64>() < p).collect())
}

/// Variances `σ²·w^β / Σ_{i≤j≤k} w^β · d³/6` with `w ~ Unif(0, 1]`, one draw
/// per canonical triple.
pub fn gen_noise_spec(d: usize, sigma: f64, beta: f64, seed: u64) -> Result<NoiseSpec> {
    if !(sigma >= 0.0) || !(beta >= 0.0) {
        return Err(Error::InvalidParameter("sigma and beta must be non-negative"));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..num_canonical(d))
        .map(|_| libm::pow(1.0 - rng.random::<f64>(), beta))
        .collect();
    let total: f64 = weights.iter().sum();
    let scale = sigma * sigma * (d * d * d) as f64 / 6.0 / total;
    let variances = weights.into_iter().map(|w| w * scale).collect();
    NoiseSpec::from_variances(d, sigma, beta, variances)
}

/// Generates an instance with all streams derived from `cfg.seed`.
pub fn make_instance(cfg: &InstanceConfig) -> Result<Instance> {
    make_instance_with(cfg, InstanceSeeds::from_master(cfg.seed))
}

pub fn make_instance_with(cfg: &InstanceConfig, seeds: InstanceSeeds) -> Result<Instance> {
    cfg.validate()?;
    let truth = gen_factors(cfg.d, cfg.r, seeds.factors)?;
    let omega = sample_omega(cfg.d, cfg.p, seeds.mask)?;
    let noise = gen_noise_spec(cfg.d, cfg.sigma, cfg.beta, seeds.weights)?;
    let mut rng = StreamRng::seed_from_u64(seeds.noise);
    let mut errors = Vec::with_capacity(omega.len());
    let mut entries = Vec::with_capacity(omega.len());
    for t in omega {
        let z: f64 = rng.sample(StandardNormal);
        let e = libm::sqrt(noise.variance(t)) * z;
        errors.push(e);
        entries.push((t, truth.cp_eval(t) + e));
    }
    let obs = ObservationSet::new(cfg.d, cfg.p, entries)?;
    Ok(Instance { truth, obs, noise, errors })
}
