//! Nuisance estimation: the exposure model `E(A|L)` and the outcome model
//! `E(Y|L)` fitted by the plug-in (PMLE-DR) and bias-reduced (BR-DR)
//! strategies, and the known-propensity reduction.
//!
//! Every cross-validation in one call shares the fold assignment drawn
//! from `seed`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{cv_lasso, fit_lasso, refit_support, CvSpec, LassoFit, LassoOptions, Refit};
use crate::model::{predict_mean, validate_dataset, Dataset, Link, WorkingModel};

/// Stopping threshold on successive objective values in the iterative
/// binary-outcome algorithm.
pub const ALGORITHM1_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_OUTER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMethod {
    PmleDr,
    BrDr,
    KnownPropensity,
}

/// The fitted propensity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propensity {
    Model(WorkingModel),
    /// Known probabilities, one per row.
    Known(Vec<f64>),
}

impl Propensity {
    pub fn predict(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Propensity::Model(m) => predict_mean(m, covariates),
            Propensity::Known(p) if p.len() == covariates.nrows() => Ok(p.clone()),
            Propensity::Known(p) => Err(Error::DimensionMismatch {
                expected: covariates.nrows(),
                got: p.len(),
            }),
        }
    }
}

impl NuisanceFit {
    /// The fitted propensity model; `None` for known probabilities.
    pub fn exposure_model(&self) -> Option<&WorkingModel> {
        match &self.exposure {
            Propensity::Model(m) => Some(m),
            Propensity::Known(_) => None,
        }
    }
}

/// A known randomization probability, given either row by row or as a
/// logistic model.
#[derive(Debug, Clone, PartialEq)]
pub enum KnownPropensity {
    Probabilities(Vec<f64>),
    Model { gamma: Vec<f64>, intercept: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub exposure: Propensity,
    pub outcome_model: WorkingModel,
    pub method: NuisanceMethod,
    /// `None` when the propensity is known.
    pub lambda_gamma: Option<f64>,
    pub lambda_beta: f64,
    pub refitted: bool,
    /// Objective values of the iterative binary-outcome algorithm.
    pub algorithm1_trace: Option<Vec<f64>>,
    /// Penalized (pre-refit) supports, 0-based.
    pub exposure_support: Vec<usize>,
    pub outcome_support: Vec<usize>,
    /// All penalized fits and refits converged (and, for the iterative
    /// algorithm, the stopping rule was met).
    pub converged: bool,
    /// Penalized models behind the refits, kept for the iterative
    /// algorithm.
    pub penalized_exposure: Option<WorkingModel>,
    pub penalized_outcome: Option<WorkingModel>,
}

/// Weights `p_i (1 - p_i)` from the clipped means of a logit model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrWeights {
    pub w: Vec<f64>,
}

pub fn compute_br_weights(model: &WorkingModel, covariates: &DMatrix<f64>) -> Result<BrWeights> {
    if model.link != Link::Logit {
        return Err(Error::WrongLink);
    }
    let p = predict_mean(model, covariates)?;
    Ok(BrWeights {
        w: p.iter().map(|p| p * (1.0 - p)).collect(),
    })
}

/// One penalized fit with its refit.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub fit: LassoFit,
    pub refit: Refit,
}

impl Step {
    fn converged(&self) -> bool {
        self.fit.converged && self.refit.converged
    }
}

fn cv_step(covariates: &DMatrix<f64>, y: &[f64], w: &[f64], link: Link, k: usize, seed: u64) -> Result<Step> {
    let cv = cv_lasso(covariates, y, w, link, &CvSpec::new(k, seed))?;
    let refit = refit_support(covariates, y, w, link, &cv.fit.support())?;
    Ok(Step { fit: cv.fit, refit })
}

/// CV'd unweighted l1 logistic regression of `A` on `L`, refit on its
/// support. Shared by PMLE-DR, BR-DR and post-double selection.
pub fn exposure_step(d: &Dataset, k_folds: usize, seed: u64) -> Result<Step> {
    cv_step(&d.covariates, &d.a, &vec![1.0; d.n()], Link::Logit, k_folds, seed)
}

/// CV'd unweighted l1 regression of `Y` on `L` (the exposure is left out:
/// the outcome model is fitted under the null), refit on its support.
pub fn outcome_step(d: &Dataset, link: Link, k_folds: usize, seed: u64) -> Result<Step> {
    cv_step(&d.covariates, &d.y, &vec![1.0; d.n()], link, k_folds, seed)
}

fn from_steps(method: NuisanceMethod, exposure: &Step, outcome: &Step) -> NuisanceFit {
    NuisanceFit {
        exposure: Propensity::Model(exposure.refit.model.clone()),
        outcome_model: outcome.refit.model.clone(),
        method,
        lambda_gamma: Some(exposure.fit.lambda),
        lambda_beta: outcome.fit.lambda,
        refitted: true,
        algorithm1_trace: None,
        exposure_support: exposure.fit.support(),
        outcome_support: outcome.fit.support(),
        converged: exposure.converged() && outcome.converged(),
        penalized_exposure: Some(exposure.fit.model.clone()),
        penalized_outcome: Some(outcome.fit.model.clone()),
    }
}

/// Plug-in nuisance fits from precomputed steps.
pub fn pmle_dr_from_steps(exposure: &Step, outcome: &Step) -> NuisanceFit {
    from_steps(NuisanceMethod::PmleDr, exposure, outcome)
}

pub fn estimate_pmle_dr(d: &Dataset, outcome_link: Link, k_folds: usize, seed: u64) -> Result<NuisanceFit> {
    validate_dataset(d, Link::Logit, outcome_link)?;
    let e = exposure_step(d, k_folds, seed)?;
    let o = outcome_step(d, outcome_link, k_folds, seed)?;
    Ok(pmle_dr_from_steps(&e, &o))
}

/// Bias-reduced fits for a continuous outcome given the exposure step:
/// the outcome lasso and its refit are weighted by `pi(1 - pi)` from the
/// penalized exposure fit.
pub fn br_dr_continuous_from_exposure(d: &Dataset, exposure: &Step, k_folds: usize, seed: u64) -> Result<NuisanceFit> {
    let w = compute_br_weights(&exposure.fit.model, &d.covariates)?.w;
    let o = cv_step(&d.covariates, &d.y, &w, Link::Identity, k_folds, seed)?;
    Ok(from_steps(NuisanceMethod::BrDr, exposure, &o))
}

pub fn estimate_br_dr_continuous(d: &Dataset, k_folds: usize, seed: u64) -> Result<NuisanceFit> {
    validate_dataset(d, Link::Logit, Link::Identity)?;
    let e = exposure_step(d, k_folds, seed)?;
    br_dr_continuous_from_exposure(d, &e, k_folds, seed)
}

fn mean_logistic_loss(model: &WorkingModel, covariates: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> Result<f64> {
    let eta = model.linear_predictor(covariates)?;
    let n = y.len() as f64;
    let s: f64 = eta
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (e, y))| {
            // log(1 + e^eta) - y eta, evaluated stably.
            let l = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() } - y * e;
            l * w.map_or(1.0, |w| w[i])
        })
        .sum();
    Ok(s / n)
}

/// The iterative algorithm for a binary outcome. Penalties are chosen by
/// cross-validation at the first iteration (with that iteration's
/// weights) and held fixed afterwards. The refitted track feeds the test;
/// the trace holds the objective on refitted estimates.
pub fn estimate_br_dr_binary(d: &Dataset, k_folds: usize, seed: u64, max_outer: usize) -> Result<NuisanceFit> {
    validate_dataset(d, Link::Logit, Link::Logit)?;
    let e0 = exposure_step(d, k_folds, seed)?;
    let o0 = outcome_step(d, Link::Logit, k_folds, seed)?;
    br_dr_binary_from_steps(d, &e0, &o0, k_folds, seed, max_outer)
}

pub fn br_dr_binary_from_steps(
    d: &Dataset,
    e0: &Step,
    o0: &Step,
    k_folds: usize,
    seed: u64,
    max_outer: usize,
) -> Result<NuisanceFit> {
    if max_outer < 1 {
        return Err(Error::InvalidArgument("max_outer must be >= 1".into()));
    }
    let l = &d.covariates;
    let weights = |m: &WorkingModel| compute_br_weights(m, l).map(|b| b.w);

    let mut gamma_hat = e0.fit.model.clone();
    let mut beta_hat = o0.fit.model.clone();
    let mut gamma_chk = e0.refit.model.clone();
    let mut beta_chk = o0.refit.model.clone();
    let mut converged_fits = e0.converged() && o0.converged();
    let mut trace =
        vec![mean_logistic_loss(&gamma_chk, l, &d.a, None)? + mean_logistic_loss(&beta_chk, l, &d.y, None)?];
    let mut lambdas: Option<(f64, f64)> = None;
    let mut supports = (e0.fit.support(), o0.fit.support());
    let degenerate = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    let stop_early = degenerate(&d.y) || degenerate(&d.a);
    let mut stopped = false;

    for _j in 1..=max_outer {
        let w_gamma = weights(&beta_hat)?;
        let w_beta = weights(&gamma_hat)?;
        let w_gamma_chk = weights(&beta_chk)?;
        let w_beta_chk = weights(&gamma_chk)?;
        let (g_fit, b_fit) = match lambdas {
            None => {
                let spec = CvSpec::new(k_folds, seed);
                let g = cv_lasso(l, &d.a, &w_gamma, Link::Logit, &spec)?.fit;
                let b = cv_lasso(l, &d.y, &w_beta, Link::Logit, &spec)?.fit;
                lambdas = Some((g.lambda, b.lambda));
                (g, b)
            }
            Some((lg, lb)) => {
                let opts = LassoOptions::default();
                (
                    fit_lasso(l, &d.a, &w_gamma, Link::Logit, lg, &opts)?,
                    fit_lasso(l, &d.y, &w_beta, Link::Logit, lb, &opts)?,
                )
            }
        };
        let g_ref = refit_support(l, &d.a, &w_gamma_chk, Link::Logit, &g_fit.support())?;
        let b_ref = refit_support(l, &d.y, &w_beta_chk, Link::Logit, &b_fit.support())?;
        converged_fits &= g_fit.converged && b_fit.converged && g_ref.converged && b_ref.converged;
        let nu = mean_logistic_loss(&g_ref.model, l, &d.a, Some(&w_gamma_chk))?
            + mean_logistic_loss(&b_ref.model, l, &d.y, Some(&w_beta_chk))?;
        supports = (g_fit.support(), b_fit.support());
        gamma_hat = g_fit.model;
        beta_hat = b_fit.model;
        gamma_chk = g_ref.model;
        beta_chk = b_ref.model;
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(nu);
        if (nu - prev).abs() < ALGORITHM1_TOL || stop_early {
            stopped = true;
            break;
        }
    }
    let (lg, lb) = lambdas.expect("at least one iteration ran");
    Ok(NuisanceFit {
        exposure: Propensity::Model(gamma_chk),
        outcome_model: beta_chk,
        method: NuisanceMethod::BrDr,
        lambda_gamma: Some(lg),
        lambda_beta: lb,
        refitted: true,
        algorithm1_trace: Some(trace),
        exposure_support: supports.0,
        outcome_support: supports.1,
        converged: converged_fits && stopped,
        penalized_exposure: Some(gamma_hat),
        penalized_outcome: Some(beta_hat),
    })
}

/// Checks and materializes known propensity probabilities.
pub fn known_probabilities(d: &Dataset, known: &KnownPropensity) -> Result<Vec<f64>> {
    let probs = match known {
        KnownPropensity::Probabilities(p) => {
            if p.len() != d.n() {
                return Err(Error::DimensionMismatch {
                    expected: d.n(),
                    got: p.len(),
                });
            }
            p.clone()
        }
        KnownPropensity::Model { gamma, intercept } => {
            // Unclipped, so a model that hits 0 or 1 is reported.
            let m = WorkingModel::new(Link::Logit, *intercept, gamma.clone());
            m.linear_predictor(&d.covariates)?
                .into_iter()
                .map(crate::model::expit)
                .collect()
        }
    };
    if let Some(row) = probs.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidProbability {
            row: row + 1,
            value: probs[row],
        });
    }
    Ok(probs)
}

/// Known-propensity fits from a precomputed unweighted outcome step.
pub fn known_propensity_from_step(d: &Dataset, known: &KnownPropensity, outcome: &Step) -> Result<NuisanceFit> {
    let probs = known_probabilities(d, known)?;
    Ok(NuisanceFit {
        exposure: Propensity::Known(probs),
        outcome_model: outcome.refit.model.clone(),
        method: NuisanceMethod::KnownPropensity,
        lambda_gamma: None,
        lambda_beta: outcome.fit.lambda,
        refitted: true,
        algorithm1_trace: None,
        exposure_support: Vec::new(),
        outcome_support: outcome.fit.support(),
        converged: outcome.converged(),
        penalized_exposure: None,
        penalized_outcome: Some(outcome.fit.model.clone()),
    })
}

/// The propensity is fixed at the known values; the outcome model is the
/// unweighted CV'd lasso with its refit.
pub fn known_propensity_fit(
    d: &Dataset,
    known: &KnownPropensity,
    outcome_link: Link,
    k_folds: usize,
    seed: u64,
) -> Result<NuisanceFit> {
    validate_dataset(d, Link::Identity, outcome_link)?;
    known_probabilities(d, known)?;
    let o = outcome_step(d, outcome_link, k_folds, seed)?;
    known_propensity_from_step(d, known, &o)
}
