//! Acceptance criteria. Each test prints one PASS/FAIL line.
//!
//! The default is smoke mode: 250 replications for the Type I error
//! tables, with every interval widened by 0.02 on each side. Set
//! `HDDR_ACCEPTANCE=full` for 1000 replications at the stated tolerances
//! and `HDDR_ACCEPTANCE_EXTENDED=1` to add the n = p = 500 cells.
//! `HDDR_WORKERS` sets the thread count.

mod common;

use std::io::Write;

use hddr::nuisance::{compute_br_weights, estimate_br_dr_binary, ALGORITHM1_TOL, DEFAULT_MAX_OUTER};
use hddr::simulation::{
    build_binary_outcome_params, build_dgp_params, fixed_nuisance_statistics, generate_dataset, monte_carlo,
    monte_carlo_type1, rep_seeds, simulate_cells, Cell, MethodReport, SimOptions, SimReport, TABLE1_METHODS,
};
use hddr::{Method, WorkingModel};

fn full_mode() -> bool {
    std::env::var("HDDR_ACCEPTANCE").map(|v| v == "full").unwrap_or(false)
}

fn extended() -> bool {
    std::env::var("HDDR_ACCEPTANCE_EXTENDED").map(|v| v == "1").unwrap_or(false)
}

fn workers() -> usize {
    std::env::var("HDDR_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn table_reps() -> usize {
    if full_mode() {
        1000
    } else {
        250
    }
}

/// Extra width added to each side of a rejection-rate interval.
fn slack() -> f64 {
    if full_mode() {
        0.0
    } else {
        0.02
    }
}

const MASTER_SEED: u64 = 20_240_601;

/// Written straight to the process stdout so the line shows even when
/// test output is captured.
fn report(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[acceptance] {tag} criterion {criterion}: {detail}");
    let _ = out.flush();
}

struct Band {
    method: Method,
    lo: f64,
    hi: f64,
}

fn band(method: Method, lo: f64, hi: f64) -> Band {
    Band { method, lo, hi }
}

fn find<'a>(r: &'a SimReport, m: Method) -> &'a MethodReport {
    r.methods.iter().find(|x| x.method == m.name()).expect("method present")
}

/// Checks each band; returns whether all passed and a description.
fn check_bands(r: &SimReport, bands: &[Band]) -> (bool, String) {
    let s = slack();
    let mut ok = true;
    let mut parts = Vec::new();
    for b in bands {
        let m = find(r, b.method);
        let lo = b.lo - s;
        let hi = b.hi + s;
        let pass = m.rejection_rate >= lo && m.rejection_rate <= hi;
        ok &= pass;
        let range = if hi >= 1.0 { format!(">= {lo:.3}") } else { format!("[{lo:.3}, {hi:.3}]") };
        parts.push(format!(
            "{} {:.3} (mc_se {:.3}, failures {}) in {range}: {}",
            m.method,
            m.rejection_rate,
            m.mc_se,
            m.failures,
            if pass { "ok" } else { "MISS" }
        ));
    }
    (ok, parts.join("; "))
}

fn run_cell(n: usize, p: usize, misspecified: bool, methods: &[Method], reps: usize) -> SimReport {
    let params = build_dgp_params(n, p, misspecified).unwrap();
    let opts = SimOptions {
        workers: workers(),
        ..SimOptions::default()
    };
    monte_carlo(methods, &params, reps, MASTER_SEED, &opts, None).unwrap()
}

#[test]
fn criterion_1_type1_correct_models_n200() {
    let reps = table_reps();
    let r = run_cell(200, 200, false, &TABLE1_METHODS, reps);
    let (ok, detail) = check_bands(
        &r,
        &[
            band(Method::PmleDr, 0.035, 0.075),
            band(Method::BrDr, 0.033, 0.073),
            band(Method::NaiveForced, 0.40, 1.0),
            band(Method::NaiveUnforced, 0.15, 0.40),
            band(Method::PdsCv, 0.08, 0.30),
        ],
    );
    report("1", ok, &format!("{reps} reps; {detail}"));
    assert!(ok, "{detail}");
}

#[test]
fn criterion_2_type1_misspecified_outcome_n200() {
    let reps = table_reps();
    let r = run_cell(200, 200, true, &[Method::PmleDr, Method::BrDr], reps);
    let (ok, detail) = check_bands(&r, &[band(Method::PmleDr, 0.04, 0.085), band(Method::BrDr, 0.026, 0.07)]);
    report("2", ok, &format!("{reps} reps; {detail}"));
    assert!(ok, "{detail}");
}

#[test]
fn criterion_3_type1_n500_extended() {
    if !extended() {
        report("3", true, "skipped (optional; set HDDR_ACCEPTANCE_EXTENDED=1)");
        return;
    }
    let reps = table_reps();
    let mut all = true;
    let mut details = Vec::new();
    for (mis, bands) in [
        (false, [band(Method::PmleDr, 0.040, 0.080), band(Method::BrDr, 0.049, 0.089)]),
        (true, [band(Method::PmleDr, 0.035, 0.075), band(Method::BrDr, 0.039, 0.079)]),
    ] {
        let r = run_cell(500, 500, mis, &[Method::PmleDr, Method::BrDr], reps);
        let (ok, d) = check_bands(&r, &bands);
        all &= ok;
        details.push(format!("misspecified={mis}: {d}"));
    }
    report("3", all, &format!("{reps} reps; {}", details.join(" | ")));
    assert!(all);
}

#[test]
fn criterion_4_oracle_normality() {
    let reps = 2000;
    let params = build_dgp_params(500, 500, false).unwrap();
    let stats = fixed_nuisance_statistics(
        &params,
        &params.true_exposure_model(),
        &params.outcome_working_model(),
        reps,
        MASTER_SEED,
        workers(),
    )
    .unwrap();
    let t: Vec<f64> = stats.into_iter().map(|s| s.unwrap().t_n).collect();
    let k = t.len() as f64;
    let mean = t.iter().sum::<f64>() / k;
    let var = t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    let rej = t.iter().filter(|x| x.abs() > 1.959963984540054).count() as f64 / k;
    let ok = mean.abs() <= 0.07 && (0.85..=1.15).contains(&var) && (0.035..=0.065).contains(&rej);
    report(
        "4",
        ok,
        &format!("{reps} reps, n = p = 500: mean {mean:.4} (|.| <= 0.07), variance {var:.4} in [0.85, 1.15], rejection {rej:.4} in [0.035, 0.065]"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_known_constant_propensity() {
    let reps = 1000;
    let params = build_dgp_params(200, 200, true).unwrap().with_randomized_exposure(0.5).unwrap();
    let r = monte_carlo_type1(Method::KnownPropensity, &params, reps, 0.05, MASTER_SEED, workers()).unwrap();
    let ok = (0.03..=0.07).contains(&r.rejection_rate) && r.failures == 0;
    report(
        "5",
        ok,
        &format!(
            "{reps} reps, propensity 0.5, misspecified outcome: rejection {:.3} (mc_se {:.3}, failures {}) in [0.03, 0.07]",
            r.rejection_rate, r.mc_se, r.failures
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_solver_oracle() {
    let s = common::oracle_comparison();
    let ok = s.instances == 50 && s.max_coef_diff <= 1e-5 && s.max_kkt <= 1e-6;
    report(
        "6",
        ok,
        &format!(
            "{} instances, {} converged: max coefficient gap {:.2e} (<= 1e-5), max KKT residual {:.2e} (<= 1e-6)",
            s.instances, s.converged, s.max_coef_diff, s.max_kkt
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_algorithm1_convergence() {
    let params = build_binary_outcome_params(200, 50).unwrap();
    let mut by_rule = 0;
    let mut weights_ok = true;
    let mut min_w = f64::INFINITY;
    let mut max_w = 0.0f64;
    let mut max_iter = 0;
    for seed in 0..100u64 {
        let (data_seed, cv_seed) = rep_seeds(MASTER_SEED, seed);
        let d = generate_dataset(&params, data_seed);
        let fit = estimate_br_dr_binary(&d, 10, cv_seed, DEFAULT_MAX_OUTER).unwrap();
        let trace = fit.algorithm1_trace.as_ref().unwrap();
        let k = trace.len();
        max_iter = max_iter.max(k - 1);
        if k - 1 <= DEFAULT_MAX_OUTER && (trace[k - 1] - trace[k - 2]).abs() < ALGORITHM1_TOL {
            by_rule += 1;
        }
        let models: [&WorkingModel; 4] = [
            fit.penalized_exposure.as_ref().unwrap(),
            fit.penalized_outcome.as_ref().unwrap(),
            fit.exposure_model().unwrap(),
            &fit.outcome_model,
        ];
        for m in models {
            for w in compute_br_weights(m, &d.covariates).unwrap().w {
                min_w = min_w.min(w);
                max_w = max_w.max(w);
                weights_ok &= w > 0.0 && w <= 0.25;
            }
        }
    }
    let ok = by_rule >= 95 && weights_ok;
    report(
        "7",
        ok,
        &format!(
            "n = 200, p = 50, 100 seeds: {by_rule} stopped by the 1e-4 rule (>= 95), most iterations {max_iter}; weights in [{min_w:.3e}, {max_w:.4}] within (0, 0.25]"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_determinism_across_workers() {
    let reps = 4;
    let cells = [Cell::new(200, 200, false), Cell::new(200, 200, true)];
    let run = |w: usize| {
        let opts = SimOptions {
            workers: w,
            ..SimOptions::default()
        };
        simulate_cells(&cells, &TABLE1_METHODS, reps, MASTER_SEED, &opts, None).unwrap()
    };
    let base = run(1);
    let again = run(1);
    let mut ok = base == again && base.to_csv() == again.to_csv();
    for w in [4, 16] {
        let other = run(w);
        ok &= other == base && other.to_csv() == base.to_csv();
    }
    ok &= base.cells.iter().all(|c| c.report.is_some());
    report(
        "8",
        ok,
        &format!("table at {reps} reps over both n = 200 cells: identical across two runs and workers 1, 4, 16"),
    );
    assert!(ok);
}

fn score_mean_check(label: &str, params: &hddr::simulation::DgpParams, exposure: &WorkingModel, outcome: &WorkingModel) -> (bool, String) {
    let reps = 1000;
    let stats = fixed_nuisance_statistics(params, exposure, outcome, reps, MASTER_SEED, workers()).unwrap();
    let s: Vec<f64> = stats
        .into_iter()
        .map(|r| {
            let r = r.unwrap();
            (r.n as f64).sqrt() * r.score_mean
        })
        .collect();
    let k = s.len() as f64;
    let mean = s.iter().sum::<f64>() / k;
    let sd = (s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0)).sqrt();
    let se = sd / k.sqrt();
    let ok = mean.abs() <= 3.0 * se;
    (ok, format!("{label}: mean {mean:.4}, mc_se {se:.4}, ratio {:.2} (<= 3)", mean.abs() / se))
}

#[test]
fn criterion_9_double_robust_score_mean() {
    // True propensity with a wrong outcome model (the linear model fitted
    // to the absolute-value outcome), then a wrong propensity
    // (intercept only) with the true outcome model.
    let mis = build_dgp_params(200, 200, true).unwrap();
    let (ok1, d1) = score_mean_check(
        "true exposure, wrong outcome",
        &mis,
        &mis.true_exposure_model(),
        &mis.outcome_working_model(),
    );
    let cor = build_dgp_params(200, 200, false).unwrap();
    let wrong_exposure = WorkingModel::new(hddr::Link::Logit, cor.gamma0, vec![0.0; cor.p]);
    let (ok2, d2) = score_mean_check("wrong exposure, true outcome", &cor, &wrong_exposure, &cor.outcome_working_model());
    let ok = ok1 && ok2;
    report("9", ok, &format!("1000 reps, n = p = 200: {d1}; {d2}"));
    assert!(ok);
}
