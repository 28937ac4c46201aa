use hddr::comparators::support_union;
use hddr::glm::{fit_lasso, lambda_max, refit_support, LassoOptions};
use hddr::nuisance::{
    br_dr_continuous_from_exposure, compute_br_weights, estimate_br_dr_binary, known_propensity_fit, outcome_step,
    Step,
};
use hddr::score::{score_contributions, test_statistic};
use hddr::simulation::{build_binary_outcome_params, build_dgp_params, generate_dataset};
use hddr::{expit, run_test, Dataset, KnownPropensity, Link, Method, TestOptions, WorkingModel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_continuous(seed: u64) -> Dataset {
    let params = build_dgp_params(100, 100, false).unwrap();
    generate_dataset(&params, seed)
}

#[test]
fn known_propensity_representations_agree() {
    let params = build_dgp_params(100, 100, true).unwrap();
    let d = generate_dataset(&params, 4);
    let e = params.true_exposure_model();
    let probs: Vec<f64> = e.linear_predictor(&d.covariates).unwrap().into_iter().map(expit).collect();
    let a = known_propensity_fit(
        &d,
        &KnownPropensity::Model {
            gamma: e.coef.clone(),
            intercept: e.intercept,
        },
        Link::Identity,
        10,
        3,
    )
    .unwrap();
    let b = known_propensity_fit(&d, &KnownPropensity::Probabilities(probs), Link::Identity, 10, 3).unwrap();
    let ta = test_statistic(&score_contributions(&d, &a).unwrap()).unwrap();
    let tb = test_statistic(&score_contributions(&d, &b).unwrap()).unwrap();
    assert!((ta.t_n - tb.t_n).abs() < 1e-12);
    assert_eq!(a.outcome_model, b.outcome_model);
}

#[test]
fn known_propensity_outside_unit_interval_is_rejected() {
    let d = small_continuous(1);
    let mut probs = vec![0.5; d.n()];
    probs[7] = 1.0;
    let err = known_propensity_fit(&d, &KnownPropensity::Probabilities(probs), Link::Identity, 10, 1).unwrap_err();
    assert_eq!(err, hddr::Error::InvalidProbability { row: 8, value: 1.0 });
}

/// With an intercept-only propensity the outcome weights are constant, and
/// a constant weight only rescales the loss. The weighted outcome model
/// then equals the unweighted one.
#[test]
fn constant_weights_reduce_to_the_unweighted_outcome_model() {
    let d = small_continuous(9);
    let ones = vec![1.0; d.n()];
    let opts = LassoOptions::default();
    let lmax = lambda_max(&d.covariates, &d.a, &ones, Link::Logit, &opts).unwrap();
    let fit = fit_lasso(&d.covariates, &d.a, &ones, Link::Logit, lmax * 1.01, &opts).unwrap();
    assert!(fit.support().is_empty());
    let refit = refit_support(&d.covariates, &d.a, &ones, Link::Logit, &[]).unwrap();
    let exposure = Step { fit, refit };
    let br = br_dr_continuous_from_exposure(&d, &exposure, 10, 5).unwrap();
    let plain = outcome_step(&d, Link::Identity, 10, 5).unwrap();
    assert_eq!(br.outcome_support, plain.fit.support());
    assert!((br.outcome_model.intercept - plain.refit.model.intercept).abs() < 1e-8);
    for (x, y) in br.outcome_model.coef.iter().zip(&plain.refit.model.coef) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn algorithm1_stops_after_one_pass_on_a_constant_outcome() {
    let params = build_binary_outcome_params(120, 20).unwrap();
    let mut d = generate_dataset(&params, 2);
    d.y.iter_mut().for_each(|v| *v = 1.0);
    let fit = estimate_br_dr_binary(&d, 10, 1, 50).unwrap();
    assert_eq!(fit.algorithm1_trace.as_ref().unwrap().len(), 2);
    // The fitted outcome mean is the clipped constant 1 - 1e-10, so every
    // residual is 1e-10 and the score carries no signal.
    let u = score_contributions(&d, &fit).unwrap();
    assert!(u.iter().all(|v| v.abs() < 1e-9));
    match test_statistic(&u) {
        Ok(s) => assert!(s.t_n.abs() < 1e-6),
        Err(e) => assert_eq!(e, hddr::Error::ZeroVariance),
    }
}

#[test]
fn algorithm1_trace_and_weights() {
    let params = build_binary_outcome_params(200, 30).unwrap();
    let d = generate_dataset(&params, 17);
    let fit = estimate_br_dr_binary(&d, 10, 17, 50).unwrap();
    let trace = fit.algorithm1_trace.clone().unwrap();
    assert!(trace.len() >= 2 && trace.len() <= 51);
    let last = trace[trace.len() - 1] - trace[trace.len() - 2];
    assert!(last.abs() < 1e-4);
    for m in [
        fit.penalized_exposure.as_ref().unwrap(),
        fit.penalized_outcome.as_ref().unwrap(),
        &fit.outcome_model,
    ] {
        let w = compute_br_weights(m, &d.covariates).unwrap().w;
        assert!(w.iter().all(|&v| v > 0.0 && v <= 0.25));
    }
}

#[test]
fn br_weights_need_a_logit_model() {
    let m = WorkingModel::zero(Link::Identity, 2);
    assert_eq!(
        compute_br_weights(&m, &DMatrix::zeros(3, 2)).unwrap_err(),
        hddr::Error::WrongLink
    );
}

#[test]
fn methods_share_cross_validation_folds() {
    // PDS and PMLE-DR on the same data and seed select with the same
    // penalized fits, so the PDS outcome support equals PMLE-DR's.
    let d = small_continuous(21);
    let opts = TestOptions {
        seed: 8,
        ..TestOptions::default()
    };
    let pmle = run_test(&d, Method::PmleDr, &opts).unwrap();
    let pds = run_test(&d, Method::PdsCv, &opts).unwrap();
    assert_eq!(pmle.diagnostics.outcome_support, pds.diagnostics.outcome_support);
    assert_eq!(pmle.diagnostics.exposure_support, pds.diagnostics.exposure_support);
    assert_eq!(pmle.diagnostics.lambda_beta, pds.diagnostics.lambda_beta);
}

#[test]
fn run_test_is_deterministic() {
    let d = small_continuous(22);
    let opts = TestOptions::default();
    for m in [Method::PmleDr, Method::BrDr, Method::NaiveForced] {
        assert_eq!(run_test(&d, m, &opts).unwrap(), run_test(&d, m, &opts).unwrap());
    }
}

#[test]
fn comparators_reject_binary_outcomes() {
    let params = build_binary_outcome_params(60, 20).unwrap();
    let d = generate_dataset(&params, 3);
    let opts = TestOptions {
        outcome_link: Link::Logit,
        ..TestOptions::default()
    };
    assert_eq!(run_test(&d, Method::PdsCv, &opts).unwrap_err(), hddr::Error::UnsupportedOutcome);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn union_is_monotone(a in proptest::collection::vec(0usize..50, 0..20), b in proptest::collection::vec(0usize..50, 0..20)) {
        let u = support_union(&a, &b);
        prop_assert!(a.iter().all(|x| u.contains(x)));
        prop_assert!(b.iter().all(|x| u.contains(x)));
        prop_assert!(u.windows(2).all(|w| w[0] < w[1]));
        let mut ab = a.clone();
        ab.extend(&b);
        prop_assert!(u.iter().all(|x| ab.contains(x)));
    }

    #[test]
    fn statistic_is_scale_invariant_and_odd(u in proptest::collection::vec(-5.0f64..5.0, 5..60), c in 0.01f64..100.0) {
        let base = match test_statistic(&u) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let s = test_statistic(&scaled).unwrap();
        let m = test_statistic(&neg).unwrap();
        prop_assert!((s.t_n - base.t_n).abs() < 1e-9 * base.t_n.abs().max(1.0));
        prop_assert!((m.t_n + base.t_n).abs() < 1e-12 * base.t_n.abs().max(1.0));
        prop_assert!((0.0..=1.0).contains(&base.p_value));
        prop_assert_eq!(m.p_value, base.p_value);
    }
}
