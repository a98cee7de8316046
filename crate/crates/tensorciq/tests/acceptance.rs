//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Run with `cargo test -p tensorciq --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use tensorciq::harness::{aggregate, run_experiment, AggregateReport, ExperimentConfig};
use tensorciq_core::estimator::{complete, default_params, EstimatorParams};
use tensorciq_core::synth::{gen_noise_spec, make_instance, InstanceConfig};
use tensorciq_core::tensor::{canonical_triples, gradient, loss, FactorMatrix, ObservationSet};
use tensorciq_core::uq::{align_permutation, entry_variance, estimate_sigmas, oracle_sigmas};

const COVERAGE_TOL: f64 = 0.015;
const ALL_ENTRIES_TOL: f64 = 0.01;
const STD_RANGE: (f64, f64) = (0.015, 0.030);
const RISK_RANGE: (f64, f64) = (0.9, 1.2);
const KS_MAX: f64 = 0.03;
const EXACT_TOL: f64 = 1e-6;
/// Gradient iterations for noiseless recovery; 100 stops near 1e-4 at d = 50.
const EXACT_ITERATIONS: usize = 1000;
const ORACLE_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-6;

/// `(r, σ, factor Mean(CR), entry Mean(CR))` reference values.
const SETTINGS: [(usize, f64, f64, f64); 6] = [
    (2, 1e-2, 0.9481, 0.9494),
    (2, 1e-1, 0.9477, 0.9513),
    (2, 1.0, 0.9478, 0.9475),
    (4, 1e-2, 0.9450, 0.9434),
    (4, 1e-1, 0.9472, 0.9494),
    (4, 1.0, 0.9462, 0.9494),
];

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.failed += usize::from(!ok);
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn standard_run(r: usize, sigma: f64, beta: f64, seed: u64, all_entries: bool) -> AggregateReport {
    let mut cfg = ExperimentConfig::new(100, r, 0.2, sigma, beta, seed, 100);
    cfg.all_entries = all_entries;
    let run = run_experiment(&cfg, jobs()).expect("valid config");
    aggregate(&run.context, &run.reports, run.failures.len()).expect("successful trials")
}

fn coverage_criteria(report: &mut Report) -> AggregateReport {
    let mut factor_ok = true;
    let mut entry_ok = true;
    let mut factor_lines = Vec::new();
    let mut entry_lines = Vec::new();
    let mut ks_run = None;
    for (r, sigma, factor_ref, entry_ref) in SETTINGS {
        let start = Instant::now();
        let agg = standard_run(r, sigma, 5.0, 10 * r as u64, false);
        let f = &agg.coverage_factor;
        let e = &agg.coverage_entry;
        let f_ok = agg.failures == 0
            && (f.mean - factor_ref).abs() <= COVERAGE_TOL
            && (STD_RANGE.0..=STD_RANGE.1).contains(&f.std);
        let e_ok = agg.failures == 0 && (e.mean - entry_ref).abs() <= COVERAGE_TOL;
        factor_ok &= f_ok;
        entry_ok &= e_ok;
        factor_lines.push(format!(
            "(r={r}, σ={sigma}) mean {:.4} vs {factor_ref} std {:.4} failures {} [{}]",
            f.mean,
            f.std,
            agg.failures,
            if f_ok { "ok" } else { "out of range" }
        ));
        entry_lines.push(format!(
            "(r={r}, σ={sigma}) mean {:.4} vs {entry_ref} std {:.4} [{}]",
            e.mean,
            e.std,
            if e_ok { "ok" } else { "out of range" }
        ));
        println!("  ran (r={r}, σ={sigma}) in {:.1}s", start.elapsed().as_secs_f64());
        if (r, sigma) == (4, 1e-1) {
            ks_run = Some(agg);
        }
    }
    report.line(
        "C1 factor coverage",
        factor_ok,
        format!("±{COVERAGE_TOL}, std in {STD_RANGE:?}; {}", factor_lines.join("; ")),
    );

    let (r, sigma, _, entry_ref) = SETTINGS[1];
    let all = standard_run(r, sigma, 5.0, 10 * r as u64, true);
    let all_ok = all.failures == 0 && (all.coverage_entry.mean - entry_ref).abs() <= ALL_ENTRIES_TOL;
    entry_ok &= all_ok;
    report.line(
        "C2 entry coverage",
        entry_ok,
        format!(
            "±{COVERAGE_TOL} on 2000 sampled entries; {}; all {} entries at (r={r}, σ={sigma}): mean {:.4} vs {entry_ref} ±{ALL_ENTRIES_TOL}",
            entry_lines.join("; "),
            all.coverage_entry.locations,
            all.coverage_entry.mean
        ),
    );
    ks_run.expect("setting (4, 0.1) is part of the table")
}

fn risk_criterion(report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for sigma in [1e-2, 1e-1] {
        let agg = standard_run(4, sigma, 0.0, 11, false);
        let factor: Vec<f64> =
            agg.l2_risk_factor.iter().zip(&agg.cr_bound_factor).map(|(e, b)| e / b).collect();
        let tensor = agg.l2_risk_tensor / agg.cr_bound_tensor;
        let in_range = |x: &f64| (RISK_RANGE.0..=RISK_RANGE.1).contains(x);
        ok &= agg.failures == 0 && factor.iter().all(in_range) && in_range(&tensor);
        parts.push(format!(
            "σ={sigma}: factor ratios [{}] tensor ratio {tensor:.4}",
            factor.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
        ));
    }
    report.line("C3 l2 risk vs Cramér–Rao", ok, format!("ratios in {RISK_RANGE:?}; {}", parts.join("; ")));
}

fn normality_criterion(report: &mut Report, agg: &AggregateReport) {
    let stat = |name: &str| agg.ks.iter().find(|k| k.name == name).map(|k| (k.statistic, k.n));
    let (ru, nu) = stat("pooled_RU").expect("pooled factor errors");
    let (rt, nt) = stat("pooled_RT").expect("pooled entry errors");
    report.line(
        "C4 normality (KS)",
        ru < KS_MAX && rt < KS_MAX,
        format!("pooled R^U D={ru:.4} (n={nu}), pooled R^T D={rt:.4} (n={nt}); threshold {KS_MAX}"),
    );
}

fn exact_recovery_criterion(report: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut runs = 0;
    for r in [1, 2, 4] {
        for seed in 0..20 {
            let cfg = InstanceConfig { d: 50, r, p: 0.5, sigma: 0.0, beta: 0.0, seed };
            let inst = make_instance(&cfg).expect("valid instance");
            let params = EstimatorParams { iterations: EXACT_ITERATIONS, ..default_params(50, r, 0.5) };
            runs += 1;
            match complete(&inst.obs, r, &params, seed + 1000) {
                Ok(fit) => {
                    let map = align_permutation(&fit.factors, &inst.truth).expect("same shape");
                    worst = worst.max(map.residual / inst.truth.as_matrix().norm());
                }
                Err(_) => failures += 1,
            }
        }
    }
    report.line(
        "C5 noiseless exact recovery",
        failures == 0 && worst < EXACT_TOL,
        format!("{runs} runs, {failures} failures, worst relative error {worst:.2e} (< {EXACT_TOL:e}, t0={EXACT_ITERATIONS})"),
    );
}

fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn oracle_criterion(report: &mut Report) {
    let start = Instant::now();
    let mut worst_cov: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for n in 0..100u64 {
        let d = 2 + (n % 3) as usize;
        let r = 1 + (n % 2) as usize;
        let u = random_factors(d, r, n);
        let res = random_obs(d, 0.5, 0.7, n + 10_000);
        let noise = gen_noise_spec(d, 0.7, 3.0, n + 20_000).expect("valid noise");
        let plugin = estimate_sigmas(&u, &res).expect("regular gram");
        let oracle = oracle_sigmas(&u, &noise, 0.5).expect("regular gram");
        for k in 0..d {
            worst_cov = worst_cov.max(rel_close(&plugin[k].matrix, &dense_plugin_sigma(&u, &res, k)));
            worst_cov = worst_cov.max(rel_close(&oracle[k].matrix, &dense_oracle_sigma(&u, &noise, 0.5, k)));
        }
        for sigmas in [&plugin, &oracle] {
            let dense: Vec<DMatrix<f64>> = sigmas.iter().map(|s| s.matrix.clone()).collect();
            for t in canonical_triples(d) {
                let got = entry_variance(&u, sigmas, t).expect("one covariance per slice").value;
                let want = dense_entry_variance(&u, &dense, t.i(), t.j(), t.k());
                worst_var = worst_var.max((got - want).abs() / want.max(1.0));
            }
        }
    }

    let mut worst_grad: f64 = 0.0;
    for n in 0..100u64 {
        let d = 2 + (n % 5) as usize;
        let r = 1 + (n % 2) as usize;
        let u = random_factors(d, r, n + 30_000);
        let obs = random_obs(d, 0.5, 0.6, n + 40_000);
        if obs.is_empty() {
            continue;
        }
        worst_grad = worst_grad.max(gradient_error(&u, &obs));
    }

    let mut align_mismatch = 0;
    for n in 0..100u64 {
        let r = 1 + (n % 4) as usize;
        let u = random_factors(6, r, n + 50_000);
        let v = random_factors(6, r, n + 60_000);
        let got = align_permutation(&u, &v).expect("same shape");
        let (_, cost) = brute_force_alignment(&u, &v);
        if (got.residual * got.residual - cost).abs() > 1e-12 * cost.max(1.0) {
            align_mismatch += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.line(
        "C6 oracle equivalence",
        worst_cov <= ORACLE_TOL && worst_var <= ORACLE_TOL && worst_grad <= GRADIENT_TOL && align_mismatch == 0 && secs < 60.0,
        format!(
            "covariance err {worst_cov:.1e}, variance err {worst_var:.1e} (≤ {ORACLE_TOL:e}); gradient rel err {worst_grad:.1e} (≤ {GRADIENT_TOL:e}); alignment mismatches {align_mismatch}/100; {secs:.1}s"
        ),
    );
}

fn gradient_error(u: &FactorMatrix, obs: &ObservationSet) -> f64 {
    let g = gradient(u, obs).expect("matching shapes");
    let h = 1e-6;
    let fd = DMatrix::from_fn(u.d(), u.r(), |i, l| {
        let mut a = u.as_matrix().clone();
        let mut b = a.clone();
        a[(i, l)] += h;
        b[(i, l)] -= h;
        let fa = loss(&FactorMatrix::new(a).expect("finite"), obs).expect("matching shapes");
        let fb = loss(&FactorMatrix::new(b).expect("finite"), obs).expect("matching shapes");
        (fa - fb) / (2.0 * h)
    });
    (g.clone() - fd).amax() / g.amax().max(1e-300)
}

fn determinism_criterion(report: &mut Report) {
    let configs = [
        r#"{"d":30,"r":2,"p":0.4,"sigma":0.1,"beta":5,"seed":1,"alpha":0.05,"trials":8}"#,
        r#"{"d":40,"r":3,"p":0.3,"sigma":1.0,"beta":0,"seed":2,"alpha":0.1,"trials":6}"#,
        r#"{"d":25,"r":1,"p":0.5,"sigma":0.01,"beta":2,"seed":3,"alpha":0.05,"trials":10,"entry_sample":300}"#,
    ];
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut ok = true;
    let mut files_compared = 0;
    for (n, cfg) in configs.iter().enumerate() {
        let cfg_path = dir.path().join(format!("cfg{n}.json"));
        fs::write(&cfg_path, cfg).expect("write config");
        let mut outputs = Vec::new();
        for jobs in ["1", "2", "4"] {
            let out_dir = dir.path().join(format!("out{n}_{jobs}"));
            let status = Command::new(env!("CARGO_BIN_EXE_tensorciq"))
                .args(["experiment", "--config"])
                .arg(&cfg_path)
                .args(["--jobs", jobs, "--out-dir"])
                .arg(&out_dir)
                .output()
                .expect("run binary");
            ok &= status.status.success();
            outputs.push(out_dir);
        }
        for name in output_names(&outputs[0]) {
            let first = fs::read(outputs[0].join(&name)).expect("output exists");
            for other in &outputs[1..] {
                ok &= fs::read(other.join(&name)).ok().as_ref() == Some(&first);
                files_compared += 1;
            }
        }
    }
    report.line(
        "C7 determinism across --jobs",
        ok && files_compared > 0,
        format!("3 configs × jobs {{1,2,4}}, {files_compared} file comparisons"),
    );
}

fn output_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok()?.file_name().into_string().ok()).collect())
        .unwrap_or_default();
    names.retain(|n| n != "manifest.json");
    names.sort();
    names
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut report = Report { failed: 0 };
    println!("acceptance: {} worker thread(s)", jobs());
    let ks_run = coverage_criteria(&mut report);
    risk_criterion(&mut report);
    normality_criterion(&mut report, &ks_run);
    exact_recovery_criterion(&mut report);
    oracle_criterion(&mut report);
    determinism_criterion(&mut report);
    println!(
        "acceptance: {} of 7 criteria failed ({:.0}s)",
        report.failed,
        start.elapsed().as_secs_f64()
    );
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
