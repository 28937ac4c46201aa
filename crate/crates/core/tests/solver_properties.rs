mod common;

use common::random_instance;
use hddr::glm::{
    cross_validate, fit_lasso, lambda_max, make_lambda_grid, refit_support, soft_threshold, LassoOptions,
};
use hddr::Link;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn link_of(b: bool) -> Link {
    if b {
        Link::Logit
    } else {
        Link::Identity
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weight_scaling_matches_penalty_scaling(seed in 0u64..10_000, logit in any::<bool>(), c in 0.1f64..10.0, frac in 0.05f64..0.9) {
        let link = link_of(logit);
        let inst = random_instance(seed, link, 40, 4);
        let opts = LassoOptions::default();
        let lambda = frac * lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let scaled: Vec<f64> = inst.w.iter().map(|w| w * c).collect();
        let a = fit_lasso(&inst.x, &inst.y, &scaled, link, lambda * c, &opts).unwrap();
        let b = fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        prop_assert!(max_diff(&a.model.coef, &b.model.coef) < 1e-8);
        prop_assert!((a.model.intercept - b.model.intercept).abs() < 1e-8);
    }

    #[test]
    fn flipping_a_column_flips_its_coefficient(seed in 0u64..10_000, logit in any::<bool>(), j in 0usize..4, frac in 0.05f64..0.9) {
        let link = link_of(logit);
        let inst = random_instance(seed, link, 40, 4);
        let opts = LassoOptions::default();
        let lambda = frac * lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let mut flipped = inst.x.clone();
        flipped.column_mut(j).neg_mut();
        let a = fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        let b = fit_lasso(&flipped, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        let mut expect = a.model.coef.clone();
        expect[j] = -expect[j];
        prop_assert!(max_diff(&expect, &b.model.coef) < 1e-8);
        // Predictions do not change.
        let ea = a.model.linear_predictor(&inst.x).unwrap();
        let eb = b.model.linear_predictor(&flipped).unwrap();
        prop_assert!(max_diff(&ea, &eb) < 1e-7);
    }

    #[test]
    fn shifting_a_column_only_moves_the_intercept(seed in 0u64..10_000, logit in any::<bool>(), shift in -20.0f64..20.0, frac in 0.05f64..0.9) {
        let link = link_of(logit);
        let inst = random_instance(seed, link, 40, 3);
        let opts = LassoOptions::default();
        let lambda = frac * lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let mut shifted = inst.x.clone();
        shifted.column_mut(1).add_scalar_mut(shift);
        let a = fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        let b = fit_lasso(&shifted, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        prop_assert!(max_diff(&a.model.coef, &b.model.coef) < 1e-7);
        prop_assert!((a.model.intercept - (b.model.intercept + shift * b.model.coef[1])).abs() < 1e-6);
    }

    #[test]
    fn fits_are_deterministic(seed in 0u64..10_000, logit in any::<bool>()) {
        let link = link_of(logit);
        let inst = random_instance(seed, link, 30, 5);
        let opts = LassoOptions { penalty_factor: Some(inst.pf.clone()) };
        let lambda = 0.2 * lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let a = fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        let b = fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(z in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(z, t);
        prop_assert!(s.abs() <= z.abs());
        if z.abs() <= t {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert!((z - s - t * z.signum()).abs() < 1e-12);
        }
    }

    #[test]
    fn unpenalized_column_is_never_dropped(seed in 0u64..10_000, logit in any::<bool>()) {
        let link = link_of(logit);
        let inst = random_instance(seed, link, 40, 4);
        let mut pf = vec![1.0; 4];
        pf[2] = 0.0;
        let opts = LassoOptions { penalty_factor: Some(pf) };
        let lmax = lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let fit = fit_lasso(&inst.x, &inst.y, &inst.w, link, lmax * 2.0, &opts).unwrap();
        prop_assert_eq!(fit.support(), vec![2]);
        prop_assert!(fit.converged);
    }
}

/// Held-out loss recomputed fold by fold with independent single-penalty fits.
#[test]
fn cross_validation_matches_brute_force() {
    for (seed, link) in [(21u64, Link::Identity), (22, Link::Logit)] {
        let inst = random_instance(seed, link, 60, 6);
        let k = 5;
        let grid = make_lambda_grid(&inst.x, &inst.y, &inst.w, link, 8, 0.1).unwrap();
        let cv = cross_validate(&inst.x, &inst.y, &inst.w, link, k, &grid, 99).unwrap();
        let folds = &cv.fold_assignment;
        let mut sizes = vec![0; k];
        for &f in folds {
            sizes[f] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let n = inst.y.len();
        for (g, &lambda) in grid.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for f in 0..k {
                let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                let xt = inst.x.select_rows(train.iter());
                let yt: Vec<f64> = train.iter().map(|&i| inst.y[i]).collect();
                let wt: Vec<f64> = train.iter().map(|&i| inst.w[i]).collect();
                let fit = fit_lasso(&xt, &yt, &wt, link, lambda, &LassoOptions::default()).unwrap();
                for i in (0..n).filter(|&i| folds[i] == f) {
                    let eta = fit.model.intercept
                        + (0..6).map(|j| inst.x[(i, j)] * fit.model.coef[j]).sum::<f64>();
                    let y = inst.y[i];
                    let loss = match link {
                        Link::Identity => (y - eta).powi(2),
                        Link::Logit => {
                            let p = 1.0 / (1.0 + (-eta).exp());
                            -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                        }
                    };
                    num += inst.w[i] * loss;
                    den += inst.w[i];
                }
            }
            let brute = num / den;
            assert!(
                (brute - cv.mean_cv_loss[g]).abs() < 1e-6 * brute.max(1.0),
                "{link:?} penalty {g}: {brute} vs {}",
                cv.mean_cv_loss[g]
            );
        }
        let best = cv.mean_cv_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(cv.mean_cv_loss[cv.index_min], best);
        assert_eq!(cv.lambda_min, grid[cv.index_min]);
    }
}

#[test]
fn least_squares_refit_matches_qr() {
    let inst = random_instance(31, Link::Identity, 45, 5);
    let support = [0usize, 2, 4];
    let r = refit_support(&inst.x, &inst.y, &inst.w, Link::Identity, &support).unwrap();
    // Independent route: QR of the row-scaled design.
    let n = inst.y.len();
    let z = DMatrix::from_fn(n, 4, |i, k| {
        let v = if k == 0 { 1.0 } else { inst.x[(i, support[k - 1])] };
        v * inst.w[i].sqrt()
    });
    let rhs = DVector::from_fn(n, |i, _| inst.y[i] * inst.w[i].sqrt());
    let qr = z.qr();
    let theta = qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs)).unwrap();
    assert!((r.model.intercept - theta[0]).abs() < 1e-10);
    for (k, &j) in support.iter().enumerate() {
        assert!((r.model.coef[j] - theta[k + 1]).abs() < 1e-10);
    }
    assert_eq!(r.model.coef[1], 0.0);
    assert_eq!(r.model.coef[3], 0.0);
}

#[test]
fn logistic_refit_solves_the_score_equations() {
    let inst = random_instance(32, Link::Logit, 50, 4);
    let support = [1usize, 3];
    let r = refit_support(&inst.x, &inst.y, &inst.w, Link::Logit, &support).unwrap();
    assert!(r.converged);
    let eta = r.model.linear_predictor(&inst.x).unwrap();
    let mut g = [0.0; 3];
    for i in 0..inst.y.len() {
        let res = inst.w[i] * (inst.y[i] - hddr::expit(eta[i]));
        g[0] += res;
        g[1] += res * inst.x[(i, 1)];
        g[2] += res * inst.x[(i, 3)];
    }
    assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
}

#[test]
fn refit_drops_collinear_columns() {
    let inst = random_instance(33, Link::Identity, 30, 3);
    let mut x = inst.x.clone();
    let c0 = x.column(0).clone_owned();
    x.set_column(2, &(c0 * 2.0));
    let r = refit_support(&x, &inst.y, &inst.w, Link::Identity, &[0, 1, 2]).unwrap();
    assert_eq!(r.dropped, vec![2]);
    assert_eq!(r.model.coef[2], 0.0);
}
