//! K-fold cross-validation over a penalty grid.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::Standardized;
use super::solver::{logistic_loss, Control, Engine};
use super::{
    build_fit, check_inputs, default_ratio, lambda_grid_from_max, path_states, LassoFit,
    LassoOptions, DEFAULT_N_LAMBDA,
};
use crate::error::{Error, Result};
use crate::model::Link;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Descending.
    pub lambda_grid: Vec<f64>,
    /// Weighted held-out loss per penalty: squared error for the identity
    /// link, binomial deviance for the logit link.
    pub mean_cv_loss: Vec<f64>,
    pub lambda_min: f64,
    pub index_min: usize,
    /// Fold label (0-based) of each observation.
    pub fold_assignment: Vec<usize>,
}

/// Fold labels from a seeded permutation; fold sizes differ by at most one.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (i, &row) in perm.iter().enumerate() {
        folds[row] = i % k;
    }
    folds
}

/// Index of the smallest loss; exact ties go to the larger penalty, which
/// comes first in a descending grid.
pub fn argmin_loss(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    best
}

fn select_rows(covariates: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    covariates.select_rows(rows.iter())
}

pub fn cross_validate(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    k: usize,
    grid: &[f64],
    seed: u64,
) -> Result<CvResult> {
    cross_validate_with(covariates, y, weights, link, k, grid, seed, &LassoOptions::default())
}

/// Cross-validated loss along `grid`. Each training fold is standardized
/// on its own and fit along the grid with warm starts; if a fold's path
/// stops early, its last fit stands in for the remaining penalties.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_with(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    k: usize,
    grid: &[f64],
    seed: u64,
    options: &LassoOptions,
) -> Result<CvResult> {
    check_inputs(covariates, y, weights, link)?;
    let n = y.len();
    if k < 2 || (n < 2 * k && k != n) {
        return Err(Error::FoldTooSmall { n, k });
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("penalty grid must be non-empty and descending".into()));
    }
    let pf = options.factors(covariates.ncols())?;
    let folds = assign_folds(n, k, seed);
    let control = Control::default();

    let mut loss_sum = vec![0.0; grid.len()];
    let mut weight_sum = 0.0;
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let x_train = select_rows(covariates, &train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let w_train: Vec<f64> = train.iter().map(|&i| weights[i]).collect();
        if !(w_train.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidArgument(format!("fold {fold} has zero training weight")));
        }
        let x = Standardized::new(&x_train, &w_train);
        let engine = Engine::new(&x, &y_train, &w_train, link, &pf);
        let path = path_states(&engine, grid, &control);
        let x_test = select_rows(covariates, &test);
        let mut last_fit: Option<LassoFit> = None;
        for (g, &lambda) in grid.iter().enumerate() {
            if let Some((state, info)) = path.get(g) {
                last_fit = Some(build_fit(&x, state, lambda, *info, link, &pf));
            }
            let fit = last_fit.as_ref().expect("path has at least one fit");
            let eta = fit.model.linear_predictor(&x_test)?;
            let mut s = 0.0;
            for (t, &i) in test.iter().enumerate() {
                let l = match link {
                    Link::Identity => (y[i] - eta[t]) * (y[i] - eta[t]),
                    Link::Logit => 2.0 * logistic_loss(y[i], eta[t]),
                };
                s += weights[i] * l;
            }
            loss_sum[g] += s;
        }
        weight_sum += test.iter().map(|&i| weights[i]).sum::<f64>();
    }
    let mean_cv_loss: Vec<f64> = loss_sum.iter().map(|s| s / weight_sum).collect();
    let index_min = argmin_loss(&mean_cv_loss);
    Ok(CvResult {
        lambda_grid: grid.to_vec(),
        lambda_min: grid[index_min],
        index_min,
        mean_cv_loss,
        fold_assignment: folds,
    })
}

/// Settings for a cross-validated lasso fit.
#[derive(Debug, Clone)]
pub struct CvSpec {
    pub k_folds: usize,
    pub seed: u64,
    pub n_lambda: usize,
    /// `None` picks [`default_ratio`].
    pub ratio: Option<f64>,
    pub options: LassoOptions,
}

impl CvSpec {
    pub fn new(k_folds: usize, seed: u64) -> Self {
        CvSpec {
            k_folds,
            seed,
            n_lambda: DEFAULT_N_LAMBDA,
            ratio: None,
            options: LassoOptions::default(),
        }
    }
}

/// A lasso fit at the cross-validated penalty, taken from the
/// warm-started path on the full data.
#[derive(Debug, Clone, PartialEq)]
pub struct CvLasso {
    pub cv: CvResult,
    pub fit: LassoFit,
}

pub fn cv_lasso(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    spec: &CvSpec,
) -> Result<CvLasso> {
    check_inputs(covariates, y, weights, link)?;
    let (n, p) = (covariates.nrows(), covariates.ncols());
    let pf = spec.options.factors(p)?;
    let ratio = spec.ratio.unwrap_or_else(|| default_ratio(n, p));
    if spec.n_lambda < 2 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument("invalid penalty grid settings".into()));
    }
    let x = Standardized::new(covariates, weights);
    let engine = Engine::new(&x, y, weights, link, &pf);
    let control = Control::default();
    let null = engine.null_state(&control);
    let grid = lambda_grid_from_max(engine.lambda_max(&null), spec.n_lambda, ratio);
    let path = path_states(&engine, &grid, &control);
    let grid = &grid[..path.len()];
    let cv = cross_validate_with(
        covariates,
        y,
        weights,
        link,
        spec.k_folds,
        grid,
        spec.seed,
        &spec.options,
    )?;
    let (state, info) = &path[cv.index_min];
    let fit = build_fit(&x, state, cv.lambda_min, *info, link, &pf);
    Ok(CvLasso { cv, fit })
}
