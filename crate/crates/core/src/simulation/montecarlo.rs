//! Monte Carlo size studies.
//!
//! Replication `r` draws its seeds from stream `r` of a ChaCha20 generator
//! keyed by the master seed: the first word seeds the dataset, the second
//! the cross-validation folds. Replications are independent, so results
//! do not depend on the number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_dataset, DgpParams, OutcomeFamily};
use crate::error::{Error, Result};
use crate::model::{Link, WorkingModel};
use crate::nuisance::{KnownPropensity, NuisanceFit, NuisanceMethod, Propensity, DEFAULT_MAX_OUTER};
use crate::score::{run_tests, score_contributions, test_statistic, Method, ScoreStatistic, TestOptions};

/// Called with (completed, total) replications.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Dataset seed and fold seed of replication `rep`.
pub fn rep_seeds(master_seed: u64, rep: u64) -> (u64, u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    (rng.next_u64(), rng.next_u64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Rejections over completed replications; NaN if none completed.
    pub rejection_rate: f64,
    /// Completed replications.
    pub reps: usize,
    pub rejections: usize,
    /// Replications in which the method returned an error.
    pub failures: usize,
    /// Completed replications with a non-converged fit.
    pub nonconverged: usize,
    /// `sqrt(r (1 - r) / reps)`.
    pub mc_se: f64,
}

impl MethodReport {
    fn from_counts(method: Method, rejections: usize, reps: usize, failures: usize, nonconverged: usize) -> Self {
        let r = rejections as f64 / reps as f64;
        MethodReport {
            method: method.name().to_string(),
            rejection_rate: r,
            reps,
            rejections,
            failures,
            nonconverged,
            mc_se: (r * (1.0 - r) / reps as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub misspecified: bool,
    pub master_seed: u64,
    pub requested_reps: usize,
    pub methods: Vec<MethodReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub alpha: f64,
    pub k_folds: usize,
    pub workers: usize,
    pub max_outer: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            alpha: 0.05,
            k_folds: 10,
            workers: 1,
            max_outer: DEFAULT_MAX_OUTER,
        }
    }
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs `f(rep)` for every replication on a pool of `workers` threads and
/// returns the results in replication order.
pub(crate) fn replicate<T: Send>(
    reps: usize,
    workers: usize,
    progress: Option<Progress<'_>>,
    f: impl Fn(u64) -> T + Sync,
) -> Result<Vec<T>> {
    let done = AtomicUsize::new(0);
    let out = pool(workers)?.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let v = f(r as u64);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(cb) = progress {
                    cb(k, reps);
                }
                v
            })
            .collect()
    });
    Ok(out)
}

fn test_options(params: &DgpParams, k_folds: usize, seed: u64, max_outer: usize) -> TestOptions {
    let e = params.true_exposure_model();
    TestOptions {
        outcome_link: match params.outcome {
            OutcomeFamily::Gaussian => Link::Identity,
            OutcomeFamily::Bernoulli => Link::Logit,
        },
        k_folds,
        seed,
        max_outer,
        known_propensity: Some(KnownPropensity::Model {
            gamma: e.coef,
            intercept: e.intercept,
        }),
    }
}

/// Rejection rates of several methods on the same simulated datasets.
/// The known-propensity method uses the true propensity of `params`.
pub fn monte_carlo(
    methods: &[Method],
    params: &DgpParams,
    reps: usize,
    master_seed: u64,
    opts: &SimOptions,
    progress: Option<Progress<'_>>,
) -> Result<SimReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    if !(opts.alpha >= 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", opts.alpha)));
    }
    let outcomes = replicate(reps, opts.workers, progress, |r| {
        let (data_seed, cv_seed) = rep_seeds(master_seed, r);
        let d = generate_dataset(params, data_seed);
        let topts = test_options(params, opts.k_folds, cv_seed, opts.max_outer);
        run_tests(&d, methods, &topts)
            .into_iter()
            .map(|res| res.map(|t| (t.p_value <= opts.alpha, t.diagnostics.converged)))
            .collect::<Vec<_>>()
    })?;
    let reports = methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let (mut rej, mut ok, mut fail, mut nonconv) = (0, 0, 0, 0);
            for rep in &outcomes {
                match rep[k] {
                    Ok((reject, converged)) => {
                        ok += 1;
                        rej += reject as usize;
                        nonconv += !converged as usize;
                    }
                    Err(_) => fail += 1,
                }
            }
            MethodReport::from_counts(m, rej, ok, fail, nonconv)
        })
        .collect();
    Ok(SimReport {
        n: params.n,
        p: params.p,
        alpha: opts.alpha,
        misspecified: params.misspecified_outcome,
        master_seed,
        requested_reps: reps,
        methods: reports,
    })
}

pub fn monte_carlo_type1(
    method: Method,
    params: &DgpParams,
    reps: usize,
    alpha: f64,
    master_seed: u64,
    workers: usize,
) -> Result<MethodReport> {
    let opts = SimOptions {
        alpha,
        workers,
        ..SimOptions::default()
    };
    let mut report = monte_carlo(&[method], params, reps, master_seed, &opts, None)?;
    Ok(report.methods.remove(0))
}

/// The score statistic with fixed (not estimated) nuisance models, over
/// simulated datasets. With the simulation truth plugged in this is the
/// oracle statistic.
pub fn fixed_nuisance_statistics(
    params: &DgpParams,
    exposure: &WorkingModel,
    outcome: &WorkingModel,
    reps: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<Result<ScoreStatistic>>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let fit = NuisanceFit {
        exposure: Propensity::Model(exposure.clone()),
        outcome_model: outcome.clone(),
        method: NuisanceMethod::KnownPropensity,
        lambda_gamma: None,
        lambda_beta: 0.0,
        refitted: false,
        algorithm1_trace: None,
        exposure_support: exposure.support(),
        outcome_support: outcome.support(),
        converged: true,
        penalized_exposure: None,
        penalized_outcome: None,
    };
    replicate(reps, workers, None, |r| {
        let (data_seed, _) = rep_seeds(master_seed, r);
        let d = generate_dataset(params, data_seed);
        test_statistic(&score_contributions(&d, &fit)?)
    })
}
