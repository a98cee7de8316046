//! Monte-Carlo experiment engine: repeated trials on a fixed ground truth,
//! empirical coverage of the confidence intervals, normality diagnostics of
//! the normalized errors, and ℓ₂ risks against Cramér–Rao references.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tensorciq_core::estimator::{complete, default_params, EstimatorParams};
use tensorciq_core::normal::{cdf, quantile, two_sided_critical};
use tensorciq_core::rng::{derive_seed, stream, Stream};
use tensorciq_core::synth::{make_instance_with, InstanceConfig, InstanceSeeds, NoiseSpec};
use tensorciq_core::tensor::{canonical_triples, num_canonical, CanonicalTriple, FactorMatrix};
use tensorciq_core::uq::{
    align_permutation, ci_entry, ci_factor, cr_bounds, entry_variance, estimate_noise,
    estimate_sigmas, oracle_sigmas, CovarianceEstimate,
};

/// Default number of tracked tensor entries per experiment.
pub const DEFAULT_ENTRY_SAMPLE: usize = 2000;

/// Maximum number of points kept for a pooled Q-Q curve.
pub const POOLED_QQ_POINTS: usize = 1000;

/// Flat experiment configuration, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub r: usize,
    pub p: f64,
    pub sigma: f64,
    pub beta: f64,
    /// Master seed of the experiment.
    pub seed: u64,
    pub alpha: f64,
    pub trials: usize,
    /// Number of tracked tensor entries; `None` means the default.
    #[serde(default)]
    pub entry_sample: Option<usize>,
    /// Track every canonical entry instead of a sample.
    #[serde(default)]
    pub all_entries: bool,
    #[serde(default)]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub eps_th: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
}

impl ExperimentConfig {
    /// Standard setting with default estimator parameters.
    pub fn new(d: usize, r: usize, p: f64, sigma: f64, beta: f64, seed: u64, trials: usize) -> Self {
        Self {
            d,
            r,
            p,
            sigma,
            beta,
            seed,
            alpha: 0.05,
            trials,
            entry_sample: None,
            all_entries: false,
            restarts: None,
            eps_th: None,
            eta: None,
            iterations: None,
        }
    }

    pub fn instance(&self) -> InstanceConfig {
        InstanceConfig {
            d: self.d,
            r: self.r,
            p: self.p,
            sigma: self.sigma,
            beta: self.beta,
            seed: self.seed,
        }
    }

    /// Estimator parameters: defaults overridden by any explicit keys.
    pub fn params(&self) -> EstimatorParams {
        let mut params = default_params(self.d, self.r, self.p);
        if let Some(v) = self.restarts {
            params.restarts = v;
        }
        if let Some(v) = self.eps_th {
            params.eps_th = v;
        }
        if let Some(v) = self.eta {
            params.eta = v;
        }
        if let Some(v) = self.iterations {
            params.iterations = v;
        }
        params
    }

    pub fn validate(&self) -> Result<(), String> {
        self.instance().validate().map_err(|e| e.to_string())?;
        self.params().validate(self.r).map_err(|e| e.to_string())?;
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err("alpha must lie in (0, 1)".into());
        }
        if self.entry_sample == Some(0) && !self.all_entries {
            return Err("entry_sample must be positive".into());
        }
        Ok(())
    }
}

/// Quantities shared by every trial: ground truth, noise model, tracked
/// entries and oracle variances.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub config: ExperimentConfig,
    pub params: EstimatorParams,
    pub truth: FactorMatrix,
    pub noise: NoiseSpec,
    pub tracked: Vec<CanonicalTriple>,
    pub oracle_sigmas: Vec<CovarianceEstimate>,
    pub oracle_entry_variances: Vec<f64>,
}

impl ExperimentContext {
    pub fn new(config: &ExperimentConfig) -> Result<Self, String> {
        config.validate()?;
        let inst = make_instance_with(&config.instance(), InstanceSeeds::for_trial(config.seed, 0))
            .map_err(|e| e.to_string())?;
        let tracked = tracked_entries(config);
        let oracle = oracle_sigmas(&inst.truth, &inst.noise, config.p).map_err(|e| e.to_string())?;
        let oracle_entry_variances = tracked
            .iter()
            .map(|&t| entry_variance(&inst.truth, &oracle, t).map(|v| v.value))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            config: config.clone(),
            params: config.params(),
            truth: inst.truth,
            noise: inst.noise,
            tracked,
            oracle_sigmas: oracle,
            oracle_entry_variances,
        })
    }
}

/// Tracked entries: every canonical triple, or a seed-derived sample that
/// always contains `(1,1,1)`, `(1,1,2)` and `(1,2,3)` (1-based) when they exist.
pub fn tracked_entries(config: &ExperimentConfig) -> Vec<CanonicalTriple> {
    let d = config.d;
    let total = num_canonical(d);
    let want = config.entry_sample.unwrap_or(DEFAULT_ENTRY_SAMPLE);
    if config.all_entries || want >= total {
        return canonical_triples(d).collect();
    }
    let mut picked: Vec<usize> = [(0, 0, 0), (0, 0, 1), (0, 1, 2)]
        .into_iter()
        .filter(|&(_, _, k)| k < d)
        .map(|(i, j, k)| CanonicalTriple::new(i, j, k).linear_index())
        .collect();
    let mut rng = stream(config.seed, Stream::EntrySample, 0);
    for idx in index::sample(&mut rng, total, want.min(total)).into_iter() {
        if picked.len() >= want {
            break;
        }
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    picked.sort_unstable();
    picked.into_iter().map(CanonicalTriple::from_linear_index).collect()
}

/// Per-trial record. Factor quantities are indexed `l·d + k` with `l` the
/// ground-truth factor; entry quantities follow the tracked-entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_index: usize,
    /// `permutation[l]` is the estimate column matched to truth column `l`.
    pub permutation: Vec<usize>,
    pub factor_errors: Vec<f64>,
    pub factor_normalized: Vec<f64>,
    pub factor_oracle_normalized: Vec<f64>,
    pub factor_hits: Vec<bool>,
    pub entry_errors: Vec<f64>,
    pub entry_normalized: Vec<f64>,
    pub entry_oracle_normalized: Vec<f64>,
    pub entry_hits: Vec<bool>,
    pub l2_factor_sq: Vec<f64>,
    pub l2_tensor_sq: f64,
    pub wall_time_secs: f64,
}

/// A trial whose estimator failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_index: usize,
    pub error: String,
}

/// Runs one trial of the experiment.
pub fn run_trial(ctx: &ExperimentContext, trial_index: usize) -> Result<TrialReport, TrialFailure> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let fail = |e: tensorciq_core::Error| TrialFailure { trial_index, error: e.to_string() };
    let seeds = InstanceSeeds::for_trial(cfg.seed, trial_index as u64);
    let inst = make_instance_with(&cfg.instance(), seeds).map_err(fail)?;
    let init_seed = derive_seed(cfg.seed, Stream::Init, trial_index as u64);
    let fit = complete(&inst.obs, cfg.r, &ctx.params, init_seed).map_err(fail)?;
    let u = &fit.factors;
    let truth = &ctx.truth;
    let perm = align_permutation(u, truth).map_err(fail)?;
    let residuals = estimate_noise(&inst.obs, u).map_err(fail)?;
    let sigmas = estimate_sigmas(u, &residuals).map_err(fail)?;

    let (d, r) = (cfg.d, cfg.r);
    let mut report = TrialReport {
        trial_index,
        permutation: perm.mapping.clone(),
        factor_errors: Vec::with_capacity(d * r),
        factor_normalized: Vec::with_capacity(d * r),
        factor_oracle_normalized: Vec::with_capacity(d * r),
        factor_hits: Vec::with_capacity(d * r),
        entry_errors: Vec::with_capacity(ctx.tracked.len()),
        entry_normalized: Vec::with_capacity(ctx.tracked.len()),
        entry_oracle_normalized: Vec::with_capacity(ctx.tracked.len()),
        entry_hits: Vec::with_capacity(ctx.tracked.len()),
        l2_factor_sq: Vec::with_capacity(r),
        l2_tensor_sq: 0.0,
        wall_time_secs: 0.0,
    };
    for (l, &s) in perm.mapping.iter().enumerate() {
        let mut sq = 0.0;
        for k in 0..d {
            let est = u.get(k, s);
            let target = truth.get(k, l);
            let err = est - target;
            sq += err * err;
            let ci = ci_factor(est, &sigmas[k], s, cfg.alpha).map_err(fail)?;
            report.factor_errors.push(err);
            report.factor_normalized.push(err / sigmas[k].matrix[(s, s)].max(0.0).sqrt());
            report
                .factor_oracle_normalized
                .push(err / ctx.oracle_sigmas[k].matrix[(l, l)].max(0.0).sqrt());
            report.factor_hits.push(ci.contains(target));
        }
        report.l2_factor_sq.push(sq);
    }
    for (n, &t) in ctx.tracked.iter().enumerate() {
        let est = u.cp_eval(t);
        let target = truth.cp_eval(t);
        let err = est - target;
        let v = entry_variance(u, &sigmas, t).map_err(fail)?;
        let ci = ci_entry(est, &v, cfg.alpha).map_err(fail)?;
        report.entry_errors.push(err);
        report.entry_normalized.push(err / v.value.sqrt());
        report.entry_oracle_normalized.push(err / ctx.oracle_entry_variances[n].sqrt());
        report.entry_hits.push(ci.contains(target));
    }
    report.l2_tensor_sq = canonical_triples(d)
        .map(|t| {
            let e = u.cp_eval(t) - truth.cp_eval(t);
            f64::from(t.multiplicity()) * e * e
        })
        .sum();
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// All trial outcomes of an experiment, ordered by trial index.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub context: ExperimentContext,
    pub reports: Vec<TrialReport>,
    pub failures: Vec<TrialFailure>,
}

/// Runs every trial on a pool of `jobs` worker threads.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentRun, String> {
    let context = ExperimentContext::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let outcomes: Vec<_> =
        pool.install(|| (0..config.trials).into_par_iter().map(|t| run_trial(&context, t)).collect());
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => reports.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(ExperimentRun { context, reports, failures })
}

/// Mean and standard deviation of per-location coverage rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub mean: f64,
    pub std: f64,
    pub locations: usize,
}

/// One labelled Q-Q curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub name: String,
    pub n: usize,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub trials: usize,
    pub failures: usize,
    pub coverage_factor: CoverageSummary,
    pub coverage_entry: CoverageSummary,
    /// Per-location factor coverage, indexed `l·d + k`.
    pub cr_factor: Vec<f64>,
    /// Per-location entry coverage in tracked-entry order.
    pub cr_entry: Vec<f64>,
    pub qq: Vec<QqSeries>,
    pub ks: Vec<KsEntry>,
    /// Mean over trials of `‖u_{π(l)} − u*_l‖₂²`.
    pub l2_risk_factor: Vec<f64>,
    /// Mean over trials of `‖T − T*‖_F²`.
    pub l2_risk_tensor: f64,
    /// `2σ_min²d / (p‖u*_l‖⁴)`.
    pub cr_bound_factor: Vec<f64>,
    /// `6σ_min²dr / p`.
    pub cr_bound_tensor: f64,
    /// Same references evaluated at `σ_max`.
    pub cr_upper_factor: Vec<f64>,
    pub cr_upper_tensor: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn coverage(reports: &[&TrialReport], hits: impl Fn(&TrialReport) -> &[bool]) -> Vec<f64> {
    let n = hits(reports[0]).len();
    let mut counts = vec![0usize; n];
    for rep in reports {
        for (c, &h) in counts.iter_mut().zip(hits(rep)) {
            *c += usize::from(h);
        }
    }
    counts.into_iter().map(|c| c as f64 / reports.len() as f64).collect()
}

fn pooled(reports: &[&TrialReport], f: impl Fn(&TrialReport) -> &[f64]) -> Vec<f64> {
    reports.iter().flat_map(|r| f(r).iter().copied()).filter(|v| v.is_finite()).collect()
}

fn thin(points: Vec<(f64, f64)>, max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max {
        return points;
    }
    let n = points.len();
    (0..max).map(|i| points[i * (n - 1) / (max - 1)]).collect()
}

/// Aggregates successful trials. Reports are ordered by trial index first, so
/// the result does not depend on the order they are supplied in.
pub fn aggregate(
    ctx: &ExperimentContext,
    reports: &[TrialReport],
    failures: usize,
) -> Result<AggregateReport, String> {
    if reports.is_empty() {
        return Err("no successful trials to aggregate".into());
    }
    let mut sorted: Vec<&TrialReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.trial_index);
    let cfg = &ctx.config;
    let d = cfg.d;

    let cr_factor = coverage(&sorted, |r| &r.factor_hits);
    let cr_entry = coverage(&sorted, |r| &r.entry_hits);
    let (fm, fs) = mean_std(&cr_factor);
    let (em, es) = mean_std(&cr_entry);

    let mut qq = Vec::new();
    let mut ks = Vec::new();
    let mut add = |name: String, samples: Vec<f64>, pooled_curve: bool| {
        if samples.is_empty() {
            return;
        }
        ks.push(KsEntry { name: name.clone(), n: samples.len(), statistic: ks_statistic(&samples) });
        if samples.len() >= 2 {
            let pts = qq_points(&samples);
            let points = if pooled_curve { thin(pts, POOLED_QQ_POINTS) } else { pts };
            qq.push(QqSeries { name, points });
        }
    };
    add("pooled_RU".into(), pooled(&sorted, |r| &r.factor_normalized), true);
    add("pooled_RT".into(), pooled(&sorted, |r| &r.entry_normalized), true);
    add("pooled_RU_oracle".into(), pooled(&sorted, |r| &r.factor_oracle_normalized), true);
    add("pooled_RT_oracle".into(), pooled(&sorted, |r| &r.entry_oracle_normalized), true);
    for k in 0..d.min(3) {
        let samples = sorted.iter().map(|r| r.factor_normalized[k]).filter(|v| v.is_finite()).collect();
        add(format!("RU_1_{}", k + 1), samples, false);
    }
    for (i, j, k) in [(0, 0, 0), (0, 0, 1), (0, 1, 2)] {
        let t = CanonicalTriple::new(i, j, k);
        if let Some(pos) = ctx.tracked.iter().position(|&s| s == t) {
            let samples =
                sorted.iter().map(|r| r.entry_normalized[pos]).filter(|v| v.is_finite()).collect();
            add(format!("RT_{}_{}_{}", i + 1, j + 1, k + 1), samples, false);
        }
    }

    let n = sorted.len() as f64;
    let l2_risk_factor = (0..cfg.r)
        .map(|l| sorted.iter().map(|r| r.l2_factor_sq[l]).sum::<f64>() / n)
        .collect();
    let l2_risk_tensor = sorted.iter().map(|r| r.l2_tensor_sq).sum::<f64>() / n;
    let lower = cr_bounds(ctx.noise.sigma_min(), cfg.p, d, cfg.r, &ctx.truth);
    let upper = cr_bounds(ctx.noise.sigma_max(), cfg.p, d, cfg.r, &ctx.truth);

    Ok(AggregateReport {
        trials: sorted.len(),
        failures,
        coverage_factor: CoverageSummary { mean: fm, std: fs, locations: cr_factor.len() },
        coverage_entry: CoverageSummary { mean: em, std: es, locations: cr_entry.len() },
        cr_factor,
        cr_entry,
        qq,
        ks,
        l2_risk_factor,
        l2_risk_tensor,
        cr_bound_factor: lower.factor,
        cr_bound_tensor: lower.tensor,
        cr_upper_factor: upper.factor,
        cr_upper_tensor: upper.tensor,
    })
}

/// Sorted samples paired with the normal quantiles `Φ⁻¹((i − 0.5)/n)`.
pub fn qq_points(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (quantile((i as f64 + 0.5) / n), x))
        .collect()
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the standard normal CDF.
pub fn ks_statistic(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        acc.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f)
    })
}

/// One row of the ℓ₂-risk comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub quantity: String,
    pub empirical: f64,
    pub theoretical: f64,
    pub ratio: f64,
}

/// Empirical ℓ₂ risks next to their Cramér–Rao values at `σ_min`.
pub fn risk_table(agg: &AggregateReport) -> Vec<RiskRow> {
    let mut rows: Vec<RiskRow> = agg
        .l2_risk_factor
        .iter()
        .zip(&agg.cr_bound_factor)
        .enumerate()
        .map(|(l, (&e, &t))| RiskRow {
            quantity: format!("u_{}", l + 1),
            empirical: e,
            theoretical: t,
            ratio: e / t,
        })
        .collect();
    rows.push(RiskRow {
        quantity: "T".into(),
        empirical: agg.l2_risk_tensor,
        theoretical: agg.cr_bound_tensor,
        ratio: agg.l2_risk_tensor / agg.cr_bound_tensor,
    });
    rows
}

/// The critical value used for the hit decisions of `alpha`.
pub fn critical_value(alpha: f64) -> f64 {
    two_sided_critical(alpha)
}
