//! The doubly robust score `U = (A - pi(L))(Y - m(L))`, the
//! self-normalized statistic and the dispatcher over test methods.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::comparators;
use crate::error::{Error, Result};
use crate::model::{predict_mean, validate_dataset, Dataset, Link};
use crate::nuisance::{self, KnownPropensity, NuisanceFit, Step, DEFAULT_MAX_OUTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PmleDr,
    BrDr,
    KnownPropensity,
    NaiveForced,
    NaiveUnforced,
    PdsCv,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::PmleDr,
        Method::BrDr,
        Method::KnownPropensity,
        Method::NaiveForced,
        Method::NaiveUnforced,
        Method::PdsCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PmleDr => "pmle-dr",
            Method::BrDr => "br-dr",
            Method::KnownPropensity => "known-propensity",
            Method::NaiveForced => "naive-forced",
            Method::NaiveUnforced => "naive-unforced",
            Method::PdsCv => "pds-cv",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Reference distribution of the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reference {
    Normal,
    StudentT { df: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// 0-based covariate indices selected by the exposure lasso.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposure_support: Option<Vec<usize>>,
    /// 0-based covariate indices selected by the outcome lasso.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_support: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_beta: Option<f64>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm1_trace: Option<Vec<f64>>,
    /// Comparators: whether the lasso kept the exposure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposure_selected: Option<bool>,
    /// Comparators: the exposure coefficient and its standard error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

/// For the score tests `score_mean` and `score_sd` are the mean and
/// (1/n) standard deviation of `U`. For the regression comparators they
/// are the exposure coefficient and `sqrt(n)` times its standard error,
/// so `t_n = sqrt(n) * score_mean / score_sd` holds throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_n: f64,
    pub p_value: f64,
    pub n: usize,
    pub score_mean: f64,
    pub score_sd: f64,
    pub method: String,
    pub reference: Reference,
    pub diagnostics: Diagnostics,
}

/// Core fields of the score statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStatistic {
    pub t_n: f64,
    pub p_value: f64,
    pub n: usize,
    pub score_mean: f64,
    pub score_sd: f64,
}

/// `2 (1 - Phi(|t|))`.
pub fn normal_two_sided(t: f64) -> f64 {
    libm::erfc(t.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn student_two_sided(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution with {df} df: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// `U_i = (a_i - pi_i)(y_i - m_i)`.
pub fn score_contributions(d: &Dataset, fit: &NuisanceFit) -> Result<Vec<f64>> {
    let pi = fit.exposure.predict(&d.covariates)?;
    let m = predict_mean(&fit.outcome_model, &d.covariates)?;
    Ok((0..d.n()).map(|i| (d.a[i] - pi[i]) * (d.y[i] - m[i])).collect())
}

/// `T_n = n^{-1/2} sum U_i / sqrt(n^{-1} sum (U_i - Ubar)^2)` with a
/// two-sided standard normal p-value.
pub fn test_statistic(u: &[f64]) -> Result<ScoreStatistic> {
    let n = u.len();
    if n < 2 {
        return Err(Error::LengthMismatch(format!("need at least 2 score values, got {n}")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "score",
            row: u.iter().position(|v| !v.is_finite()).unwrap_or(0) + 1,
            col: None,
        });
    }
    let nf = n as f64;
    let mean = u.iter().sum::<f64>() / nf;
    let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    let sd = var.sqrt();
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Rounding in the mean of a constant vector leaves a residual spread of
    // a few ulps; anything that small relative to the data is zero.
    if !(sd > 1e-13 * scale) {
        return Err(Error::ZeroVariance);
    }
    let t_n = nf.sqrt() * mean / sd;
    Ok(ScoreStatistic {
        t_n,
        p_value: normal_two_sided(t_n),
        n,
        score_mean: mean,
        score_sd: sd,
    })
}

/// Score test from fitted nuisances.
pub fn score_test(d: &Dataset, fit: &NuisanceFit, method: Method) -> Result<TestResult> {
    let u = score_contributions(d, fit)?;
    let s = test_statistic(&u)?;
    Ok(TestResult {
        t_n: s.t_n,
        p_value: s.p_value,
        n: s.n,
        score_mean: s.score_mean,
        score_sd: s.score_sd,
        method: method.name().to_string(),
        reference: Reference::Normal,
        diagnostics: Diagnostics {
            exposure_support: fit.lambda_gamma.map(|_| fit.exposure_support.clone()),
            outcome_support: Some(fit.outcome_support.clone()),
            lambda_gamma: fit.lambda_gamma,
            lambda_beta: Some(fit.lambda_beta),
            converged: fit.converged,
            algorithm1_trace: fit.algorithm1_trace.clone(),
            ..Diagnostics::default()
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOptions {
    pub outcome_link: Link,
    pub k_folds: usize,
    /// Seeds the fold assignment shared by every cross-validation.
    pub seed: u64,
    pub max_outer: usize,
    /// Required by [`Method::KnownPropensity`].
    pub known_propensity: Option<KnownPropensity>,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            outcome_link: Link::Identity,
            k_folds: 10,
            seed: 1,
            max_outer: DEFAULT_MAX_OUTER,
            known_propensity: None,
        }
    }
}

/// Lazily computed fits shared between methods on one dataset.
struct Shared<'a> {
    d: &'a Dataset,
    opts: &'a TestOptions,
    exposure: Option<Result<Step>>,
    outcome: Option<Result<Step>>,
}

impl<'a> Shared<'a> {
    fn exposure(&mut self) -> Result<&Step> {
        let (d, o) = (self.d, self.opts);
        self.exposure
            .get_or_insert_with(|| nuisance::exposure_step(d, o.k_folds, o.seed))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn outcome(&mut self) -> Result<&Step> {
        let (d, o) = (self.d, self.opts);
        self.outcome
            .get_or_insert_with(|| nuisance::outcome_step(d, o.outcome_link, o.k_folds, o.seed))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn run(&mut self, method: Method) -> Result<TestResult> {
        let (d, o) = (self.d, self.opts);
        let continuous = || {
            if o.outcome_link == Link::Identity {
                Ok(())
            } else {
                Err(Error::UnsupportedOutcome)
            }
        };
        match method {
            Method::PmleDr => {
                validate_dataset(d, Link::Logit, o.outcome_link)?;
                let e = self.exposure()?.clone();
                let fit = nuisance::pmle_dr_from_steps(&e, self.outcome()?);
                score_test(d, &fit, method)
            }
            Method::BrDr => {
                validate_dataset(d, Link::Logit, o.outcome_link)?;
                let fit = match o.outcome_link {
                    Link::Identity => {
                        let e = self.exposure()?;
                        nuisance::br_dr_continuous_from_exposure(d, e, o.k_folds, o.seed)?
                    }
                    Link::Logit => {
                        let e = self.exposure()?.clone();
                        let out = self.outcome()?;
                        nuisance::br_dr_binary_from_steps(d, &e, out, o.k_folds, o.seed, o.max_outer)?
                    }
                };
                score_test(d, &fit, method)
            }
            Method::KnownPropensity => {
                validate_dataset(d, Link::Identity, o.outcome_link)?;
                let known = o.known_propensity.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("known-propensity needs the propensity".into())
                })?;
                nuisance::known_probabilities(d, known)?;
                let fit = nuisance::known_propensity_from_step(d, known, self.outcome()?)?;
                score_test(d, &fit, method)
            }
            Method::NaiveForced | Method::NaiveUnforced => {
                continuous()?;
                validate_dataset(d, Link::Identity, Link::Identity)?;
                comparators::naive_post_selection_test(d, method == Method::NaiveForced, o.k_folds, o.seed)
            }
            Method::PdsCv => {
                continuous()?;
                validate_dataset(d, Link::Logit, Link::Identity)?;
                let e = self.exposure()?.clone();
                comparators::pds_from_steps(d, &e, self.outcome()?)
            }
        }
    }
}

/// Runs several methods on one dataset, fitting each shared nuisance step
/// once. Each result equals what [`run_test`] returns for that method.
pub fn run_tests(d: &Dataset, methods: &[Method], opts: &TestOptions) -> Vec<Result<TestResult>> {
    let mut shared = Shared {
        d,
        opts,
        exposure: None,
        outcome: None,
    };
    methods.iter().map(|&m| shared.run(m)).collect()
}

pub fn run_test(d: &Dataset, method: Method, opts: &TestOptions) -> Result<TestResult> {
    run_tests(d, &[method], opts).pop().expect("one method in, one result out")
}
