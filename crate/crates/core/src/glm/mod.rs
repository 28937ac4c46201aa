//! Weighted l1-penalized linear and logistic regression.
//!
//! Covariates are standardized internally to weighted mean 0 and weighted
//! variance 1; coefficients are reported on the original scale. The
//! intercept is never penalized. Observation weights enter the loss as
//! given (they are not renormalized), so scaling all weights by `c` is
//! equivalent to scaling the penalty by `1/c`.

mod cv;
pub(crate) mod design;
mod refit;
pub(crate) mod solver;

pub use cv::{assign_folds, cross_validate, cross_validate_with, cv_lasso, CvLasso, CvResult, CvSpec};
pub use refit::{refit_support, Refit};
pub(crate) use refit::independent_columns;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Link, WorkingModel};
use design::Standardized;
use solver::{Control, Engine, State};

/// Stationarity residual above which a fit is not reported as converged.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub model: WorkingModel,
    pub lambda: f64,
    /// Coordinate-descent sweeps (identity link) or IRLS iterations (logit).
    pub n_iter: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// Columns with zero weighted variance; their coefficients stay at 0.
    pub degenerate_columns: Vec<usize>,
    /// Per-coefficient multiplier of `lambda`; 0 leaves a column unpenalized.
    pub penalty_factor: Vec<f64>,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        self.model.support()
    }
}

/// Per-coefficient penalty factors. `None` penalizes every column equally.
#[derive(Debug, Clone, Default)]
pub struct LassoOptions {
    pub penalty_factor: Option<Vec<f64>>,
}

impl LassoOptions {
    pub(crate) fn factors(&self, p: usize) -> Result<Vec<f64>> {
        match &self.penalty_factor {
            None => Ok(vec![1.0; p]),
            Some(f) if f.len() != p => Err(Error::DimensionMismatch {
                expected: p,
                got: f.len(),
            }),
            Some(f) if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => Err(
                Error::InvalidArgument("penalty factors must be finite and >= 0".into()),
            ),
            Some(f) => Ok(f.clone()),
        }
    }
}

pub(crate) fn check_inputs(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
) -> Result<()> {
    let n = covariates.nrows();
    if y.len() != n || weights.len() != n {
        return Err(Error::LengthMismatch(format!(
            "covariates have {} rows, y {}, weights {}",
            n,
            y.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "observation weights must be finite and non-negative".into(),
        ));
    }
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidArgument("observation weights sum to zero".into()));
    }
    if link == Link::Logit {
        if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryOutcome {
                row: row + 1,
                value: y[row],
            });
        }
    }
    Ok(())
}

fn build_fit(
    x: &Standardized,
    state: &State,
    lambda: f64,
    info: solver::SolveInfo,
    link: Link,
    pf: &[f64],
) -> LassoFit {
    let (intercept, coef) = x.to_original(state.b0, &state.beta);
    LassoFit {
        model: WorkingModel::new(link, intercept, coef),
        lambda,
        n_iter: info.n_iter,
        converged: info.converged,
        kkt_violation: info.kkt,
        degenerate_columns: (0..x.p).filter(|&j| x.degenerate[j]).collect(),
        penalty_factor: pf.to_vec(),
    }
}

/// Fits the penalized model at a single `lambda`, starting from the null
/// model.
pub fn fit_lasso(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    lambda: f64,
    options: &LassoOptions,
) -> Result<LassoFit> {
    check_inputs(covariates, y, weights, link)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let pf = options.factors(covariates.ncols())?;
    let x = Standardized::new(covariates, weights);
    let engine = Engine::new(&x, y, weights, link, &pf);
    let control = Control::precise();
    let mut state = engine.null_state(&control);
    let mut ws = engine.workspace();
    let info = engine.solve(lambda, &mut state, &control, &mut ws);
    Ok(build_fit(&x, &state, lambda, info, link, &pf))
}

/// Minimizes `(2n)^{-1} sum w_i (y_i - b0 - coef'L_i)^2 + lambda ||coef||_1`.
pub fn fit_lasso_linear(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<LassoFit> {
    fit_lasso(covariates, y, weights, Link::Identity, lambda, &LassoOptions::default())
}

/// Minimizes `n^{-1} sum w_i [log(1 + e^eta_i) - y_i eta_i] + lambda ||coef||_1`.
pub fn fit_lasso_logistic(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<LassoFit> {
    fit_lasso(covariates, y, weights, Link::Logit, lambda, &LassoOptions::default())
}

/// Smallest penalty giving an empty (penalized) support.
pub fn lambda_max(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    options: &LassoOptions,
) -> Result<f64> {
    check_inputs(covariates, y, weights, link)?;
    let pf = options.factors(covariates.ncols())?;
    let x = Standardized::new(covariates, weights);
    let engine = Engine::new(&x, y, weights, link, &pf);
    let null = engine.null_state(&Control::default());
    Ok(engine.lambda_max(&null))
}

/// `n_lambda` log-spaced penalties from `lambda_max` down to
/// `ratio * lambda_max`. A zero gradient at the null model gives `[0.0]`.
pub fn lambda_grid_from_max(lambda_max: f64, n_lambda: usize, ratio: f64) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    let step = ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda)
        .map(|k| {
            if k == 0 {
                lambda_max
            } else if k == n_lambda - 1 {
                lambda_max * ratio
            } else {
                lambda_max * (step * k as f64).exp()
            }
        })
        .collect()
}

pub fn make_lambda_grid(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    make_lambda_grid_with(covariates, y, weights, link, n_lambda, ratio, &LassoOptions::default())
}

pub fn make_lambda_grid_with(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    n_lambda: usize,
    ratio: f64,
    options: &LassoOptions,
) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::InvalidArgument("n_lambda must be >= 2".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument("grid ratio must lie in (0, 1)".into()));
    }
    let lmax = lambda_max(covariates, y, weights, link, options)?;
    Ok(lambda_grid_from_max(lmax, n_lambda, ratio))
}

/// Default grid ratio: 0.01 when `p >= n`, else 1e-4.
pub fn default_ratio(n: usize, p: usize) -> f64 {
    if p >= n {
        0.01
    } else {
        1e-4
    }
}

pub const DEFAULT_N_LAMBDA: usize = 100;

/// Warm-started fits along a descending grid. The path stops early, as
/// path software conventionally does, once the fraction of deviance
/// explained exceeds 0.999 or stops increasing (relative change < 1e-5,
/// checked from the fifth penalty on).
pub(crate) fn path_states(
    engine: &Engine<'_>,
    grid: &[f64],
    control: &Control,
) -> Vec<(State, solver::SolveInfo)> {
    let mut state = engine.null_state(control);
    let null_dev = {
        let b0 = match engine.link {
            Link::Identity => engine.weighted_mean_y(),
            Link::Logit => crate::model::logit(crate::model::clip_prob(engine.weighted_mean_y())),
        };
        engine.deviance(&vec![b0; engine.x.n])
    };
    let mut ws = engine.workspace();
    let mut out = Vec::with_capacity(grid.len());
    let mut prev_ratio = 0.0;
    for (k, &lambda) in grid.iter().enumerate() {
        let info = engine.solve(lambda, &mut state, control, &mut ws);
        out.push((state.clone(), info));
        if null_dev > 0.0 && k >= 4 {
            let ratio = 1.0 - engine.deviance(&state.eta) / null_dev;
            if ratio > 0.0 && (ratio > 0.999 || ratio - prev_ratio < 1e-5 * ratio) {
                break;
            }
            prev_ratio = ratio;
        } else if null_dev > 0.0 {
            prev_ratio = 1.0 - engine.deviance(&state.eta) / null_dev;
        }
    }
    out
}

/// Fits along `grid` with warm starts. The returned path may be shorter
/// than the grid (see the early-stopping rule on [`path_states`]).
pub fn lasso_path(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    grid: &[f64],
    options: &LassoOptions,
) -> Result<Vec<LassoFit>> {
    check_inputs(covariates, y, weights, link)?;
    let pf = options.factors(covariates.ncols())?;
    let x = Standardized::new(covariates, weights);
    let engine = Engine::new(&x, y, weights, link, &pf);
    Ok(path_states(&engine, grid, &Control::default())
        .into_iter()
        .zip(grid)
        .map(|((s, info), &lambda)| build_fit(&x, &s, lambda, info, link, &pf))
        .collect())
}

/// Max subgradient residual of the lasso stationarity conditions at `fit`,
/// measured on the standardized scale on which the penalty acts:
/// `|g_j| - lambda` (clamped at 0) off the support and
/// `|g_j + lambda sign(coef_j)|` on it, plus the intercept gradient.
pub fn kkt_check(
    fit: &LassoFit,
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
) -> f64 {
    let x = Standardized::new(covariates, weights);
    let engine = Engine::new(&x, y, weights, link, &fit.penalty_factor);
    let (b0, beta) = x.to_standardized(fit.model.intercept, &fit.model.coef);
    let eta = x.linear_predictor(b0, &beta);
    let state = State {
        b0,
        beta,
        eta,
        grad: None,
        lambda: f64::INFINITY,
    };
    engine.kkt(&state, fit.lambda)
}
