//! Data model and working-model evaluation.
//!
//! A [`Dataset`] holds the outcome `y`, the exposure `a` and the covariate
//! matrix `L`. A [`WorkingModel`] is a fitted parametric mean model
//! `link^{-1}(intercept + coef·L)` used either for the propensity score
//! `E(A|L)` or for the outcome regression `E(Y|L)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logit means are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before any
/// log or weight computation.
pub const PROB_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    /// Inverse link applied to a linear predictor. Logit means are clipped.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => clip_prob(expit(eta)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            other => Err(Error::InvalidArgument(format!("unknown link '{other}'"))),
        }
    }
}

/// Logistic function `1 / (1 + e^{-t})`, evaluated without overflow.
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Outcome, exposure and covariates for `n` i.i.d. units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    /// `n x p`, column-major.
    pub covariates: DMatrix<f64>,
    pub column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset, checking shapes and finiteness. Binariness is
    /// checked by [`validate_dataset`] since it depends on the links used.
    pub fn new(y: Vec<f64>, a: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        let d = Dataset {
            y,
            a,
            covariates,
            column_names: None,
        };
        d.check_shape_and_values()?;
        Ok(d)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::LengthMismatch(format!(
                "{} column names for {} covariates",
                names.len(),
                self.p()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Column `j` of the covariate matrix as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.covariates.nrows();
        &self.covariates.as_slice()[j * n..(j + 1) * n]
    }

    fn check_shape_and_values(&self) -> Result<()> {
        let n = self.y.len();
        if self.a.len() != n || self.covariates.nrows() != n {
            return Err(Error::LengthMismatch(format!(
                "y has {} rows, a has {}, covariates have {}",
                n,
                self.a.len(),
                self.covariates.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::LengthMismatch(format!("need at least 2 rows, got {n}")));
        }
        if self.covariates.ncols() < 1 {
            return Err(Error::LengthMismatch("need at least one covariate".into()));
        }
        if let Some(row) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "y",
                row: row + 1,
                col: None,
            });
        }
        if let Some(row) = self.a.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "a",
                row: row + 1,
                col: None,
            });
        }
        for j in 0..self.p() {
            if let Some(row) = self.column(j).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    field: "covariates",
                    row: row + 1,
                    col: Some(j + 1),
                });
            }
        }
        Ok(())
    }
}

/// Checks every dataset invariant plus the binariness demanded by the
/// requested links. Rows and columns in errors are 1-based.
pub fn validate_dataset(d: &Dataset, exposure_link: Link, outcome_link: Link) -> Result<()> {
    d.check_shape_and_values()?;
    if exposure_link == Link::Logit {
        if let Some(row) = d.a.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryExposure {
                row: row + 1,
                value: d.a[row],
            });
        }
    }
    if outcome_link == Link::Logit {
        if let Some(row) = d.y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryOutcome {
                row: row + 1,
                value: d.y[row],
            });
        }
    }
    Ok(())
}

/// A fitted parametric mean model. The intercept is carried separately and
/// is never penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingModel {
    pub link: Link,
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl WorkingModel {
    pub fn new(link: Link, intercept: f64, coef: Vec<f64>) -> Self {
        WorkingModel {
            link,
            intercept,
            coef,
        }
    }

    pub fn zero(link: Link, p: usize) -> Self {
        Self::new(link, 0.0, vec![0.0; p])
    }

    /// Indices (0-based) of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.coef
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn linear_predictor(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>> {
        if covariates.ncols() != self.coef.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coef.len(),
                got: covariates.ncols(),
            });
        }
        let n = covariates.nrows();
        let data = covariates.as_slice();
        let mut eta = vec![self.intercept; n];
        for (j, &c) in self.coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (e, x) in eta.iter_mut().zip(&data[j * n..(j + 1) * n]) {
                *e += c * x;
            }
        }
        Ok(eta)
    }
}

/// Row-wise fitted means `link^{-1}(intercept + coef·L_i)`.
pub fn predict_mean(model: &WorkingModel, covariates: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut eta = model.linear_predictor(covariates)?;
    for e in eta.iter_mut() {
        *e = model.link.mean(*e);
    }
    Ok(eta)
}
