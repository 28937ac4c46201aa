//! The simulation data-generating process.
//!
//! Covariates are i.i.d. standard normal. The exposure is Bernoulli with a
//! logistic propensity `expit(gamma0 + gamma'L)` (or a constant, for a
//! randomized exposure) and the outcome is generated under the null, so it
//! never depends on the exposure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{expit, Dataset, Link, WorkingModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExposureMechanism {
    /// `P(A = 1 | L) = expit(gamma0 + gamma'L)`.
    Logistic,
    /// `P(A = 1 | L)` equal to the given constant.
    Randomized(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeFamily {
    /// `Y ~ N(mean, 1)`.
    Gaussian,
    /// `Y ~ Bernoulli(expit(mean))`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta0: f64,
    pub gamma0: f64,
    /// Covariates 1-3 enter the outcome mean through their absolute values.
    pub misspecified_outcome: bool,
    pub exposure: ExposureMechanism,
    pub outcome: OutcomeFamily,
}

fn normalize(v: &mut [f64], norm: f64) {
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x *= norm / s);
}

/// Unnormalized `b`: `2 log(21 - j)/sqrt(n)` at positions 1..=19 and
/// `10 log(j - 80)/sqrt(n)` at positions 82..=100 (1-based), zero elsewhere.
fn outcome_pattern(n: usize, p: usize) -> Vec<f64> {
    let rn = (n as f64).sqrt();
    (1..=p)
        .map(|j| match j {
            1..=19 => 2.0 * ((21 - j) as f64).ln() / rn,
            82..=100 => 10.0 * ((j - 80) as f64).ln() / rn,
            _ => 0.0,
        })
        .collect()
}

/// Unnormalized `g`: `40 log(21 - j)/sqrt(n)` at positions 1..=19.
fn exposure_pattern(n: usize, p: usize) -> Vec<f64> {
    let rn = (n as f64).sqrt();
    (1..=p)
        .map(|j| if j <= 19 { 40.0 * ((21 - j) as f64).ln() / rn } else { 0.0 })
        .collect()
}

/// Simulation truth with `||beta||_2 = 2`, `||gamma||_2 = 3`,
/// `beta0 = 1`, `gamma0 = 2`.
pub fn build_dgp_params(n: usize, p: usize, misspecified: bool) -> Result<DgpParams> {
    if p < 100 {
        return Err(Error::InvalidArgument(format!(
            "the coefficient pattern needs p >= 100, got {p}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    let mut beta = outcome_pattern(n, p);
    let mut gamma = exposure_pattern(n, p);
    normalize(&mut beta, 2.0);
    normalize(&mut gamma, 3.0);
    Ok(DgpParams {
        n,
        p,
        beta,
        gamma,
        beta0: 1.0,
        gamma0: 2.0,
        misspecified_outcome: misspecified,
        exposure: ExposureMechanism::Logistic,
        outcome: OutcomeFamily::Gaussian,
    })
}

/// Binary-outcome variant for smaller `p` (at least 19): the same exposure
/// model, and `Y ~ Bernoulli(expit(1 + beta'L))` with `beta` the outcome
/// pattern truncated to `p` columns and rescaled to norm 2.
pub fn build_binary_outcome_params(n: usize, p: usize) -> Result<DgpParams> {
    if p < 19 {
        return Err(Error::InvalidArgument(format!("need p >= 19, got {p}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    let mut beta = outcome_pattern(n, p);
    let mut gamma = exposure_pattern(n, p);
    normalize(&mut beta, 2.0);
    normalize(&mut gamma, 3.0);
    Ok(DgpParams {
        n,
        p,
        beta,
        gamma,
        beta0: 1.0,
        gamma0: 2.0,
        misspecified_outcome: false,
        exposure: ExposureMechanism::Logistic,
        outcome: OutcomeFamily::Bernoulli,
    })
}

impl DgpParams {
    pub fn with_randomized_exposure(mut self, prob: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::InvalidProbability { row: 0, value: prob });
        }
        self.exposure = ExposureMechanism::Randomized(prob);
        Ok(self)
    }

    /// The true propensity score as a working model.
    pub fn true_exposure_model(&self) -> WorkingModel {
        match self.exposure {
            ExposureMechanism::Logistic => {
                WorkingModel::new(Link::Logit, self.gamma0, self.gamma.clone())
            }
            ExposureMechanism::Randomized(q) => {
                WorkingModel::new(Link::Logit, crate::model::logit(q), vec![0.0; self.p])
            }
        }
    }

    /// The outcome working model at the simulation coefficients. It is the
    /// true regression only when the outcome is not misspecified.
    pub fn outcome_working_model(&self) -> WorkingModel {
        let link = match self.outcome {
            OutcomeFamily::Gaussian => Link::Identity,
            OutcomeFamily::Bernoulli => Link::Logit,
        };
        WorkingModel::new(link, self.beta0, self.beta.clone())
    }

    fn outcome_index(&self, row: &[f64]) -> f64 {
        let mut m = self.beta0;
        for (j, (&b, &x)) in self.beta.iter().zip(row).enumerate() {
            if b != 0.0 {
                let x = if self.misspecified_outcome && j < 3 { x.abs() } else { x };
                m += b * x;
            }
        }
        m
    }

    fn propensity(&self, row: &[f64]) -> f64 {
        match self.exposure {
            ExposureMechanism::Logistic => {
                let eta = self.gamma0
                    + self.gamma.iter().zip(row).map(|(g, x)| g * x).sum::<f64>();
                expit(eta)
            }
            ExposureMechanism::Randomized(q) => q,
        }
    }

    /// `E(Y | L)` for each row (the true outcome regression).
    pub fn true_outcome_mean(&self, covariates: &DMatrix<f64>) -> Vec<f64> {
        (0..covariates.nrows())
            .map(|i| {
                let row: Vec<f64> = covariates.row(i).iter().copied().collect();
                let m = self.outcome_index(&row);
                match self.outcome {
                    OutcomeFamily::Gaussian => m,
                    OutcomeFamily::Bernoulli => expit(m),
                }
            })
            .collect()
    }
}

/// Draws a dataset. Each row consumes `p` normals for `L`, one uniform for
/// `A` and one draw for `Y`, in that order, from a ChaCha20 stream seeded
/// by `seed`.
pub fn generate_dataset(params: &DgpParams, seed: u64) -> Dataset {
    let (n, p) = (params.n, params.p);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut covariates = DMatrix::zeros(n, p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, x) in row.iter_mut().enumerate() {
            *x = rng.sample(StandardNormal);
            covariates[(i, j)] = *x;
        }
        let u: f64 = rng.random();
        a.push(if u < params.propensity(&row) { 1.0 } else { 0.0 });
        let m = params.outcome_index(&row);
        let yi = match params.outcome {
            OutcomeFamily::Gaussian => {
                let e: f64 = rng.sample(StandardNormal);
                m + e
            }
            OutcomeFamily::Bernoulli => {
                let u: f64 = rng.random();
                if u < expit(m) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        y.push(yi);
    }
    Dataset {
        y,
        a,
        covariates,
        column_names: None,
    }
}
