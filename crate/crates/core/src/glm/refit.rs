//! Unpenalized refits on a selected support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_inputs;
use super::solver::logistic_loss;
use crate::error::{Error, Result};
use crate::model::{clip_prob, expit, logit, Link, WorkingModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refit {
    pub model: WorkingModel,
    /// Support columns dropped because they were collinear with
    /// lower-indexed ones (or constant).
    pub dropped: Vec<usize>,
    pub converged: bool,
    pub n_iter: usize,
}

/// Keeps columns in increasing index order, dropping any whose weighted,
/// centered residual after projecting on the kept ones is negligible.
pub(crate) fn independent_columns(covariates: &DMatrix<f64>, weights: &[f64], support: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = covariates.nrows();
    let wsum: f64 = weights.iter().sum();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &j in &sorted {
        let col = covariates.column(j);
        let mean = col.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / wsum;
        let mut v: Vec<f64> = (0..n).map(|i| sw[i] * (col[i] - mean)).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            dropped.push(j);
            continue;
        }
        // Two passes of modified Gram-Schmidt for stability.
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            dropped.push(j);
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            kept.push(j);
        }
    }
    (kept, dropped)
}

fn design(covariates: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = covariates.nrows();
    DMatrix::from_fn(n, cols.len() + 1, |i, k| {
        if k == 0 {
            1.0
        } else {
            covariates[(i, cols[k - 1])]
        }
    })
}

/// `(X' W X, X' W v)` for diagonal weights.
fn normal_equations(x: &DMatrix<f64>, w: &[f64], v: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| x[(i, k)] * w[i]);
    let xtwx = xw.transpose() * x;
    let xtwv = xw.transpose() * DVector::from_column_slice(v);
    (xtwx, xtwv)
}

fn into_model(link: Link, p: usize, cols: &[usize], theta: &DVector<f64>) -> WorkingModel {
    let mut coef = vec![0.0; p];
    for (k, &j) in cols.iter().enumerate() {
        coef[j] = theta[k + 1];
    }
    WorkingModel::new(link, theta[0], coef)
}

/// Unpenalized weighted least squares (identity) or logistic maximum
/// likelihood (logit) on the support columns plus an intercept.
/// Coefficients outside the support are exactly zero.
pub fn refit_support(
    covariates: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    link: Link,
    support: &[usize],
) -> Result<Refit> {
    check_inputs(covariates, y, weights, link)?;
    let (n, p) = (covariates.nrows(), covariates.ncols());
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range")));
    }
    if support.len() >= n {
        return Err(Error::SupportTooLarge {
            support: support.len(),
            n,
        });
    }
    let (cols, dropped) = independent_columns(covariates, weights, support);
    let x = design(covariates, &cols);
    match link {
        Link::Identity => {
            let (a, b) = normal_equations(&x, weights, y);
            let theta = a.cholesky().ok_or(Error::Singular)?.solve(&b);
            Ok(Refit {
                model: into_model(link, p, &cols, &theta),
                dropped,
                converged: true,
                n_iter: 1,
            })
        }
        Link::Logit => {
            let (theta, converged, n_iter) = logistic_newton(&x, y, weights);
            Ok(Refit {
                model: into_model(link, p, &cols, &theta),
                dropped,
                converged,
                n_iter,
            })
        }
    }
}

fn weighted_logistic_loss(x: &DMatrix<f64>, y: &[f64], w: &[f64], theta: &DVector<f64>) -> (f64, DVector<f64>) {
    let eta = x * theta;
    let loss = y
        .iter()
        .zip(eta.iter())
        .zip(w)
        .map(|((y, e), w)| w * logistic_loss(*y, *e))
        .sum();
    (loss, eta)
}

/// Newton-Raphson with step halving. Under separation the means saturate
/// at the clip bounds and the iteration stops without converging.
fn logistic_newton(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> (DVector<f64>, bool, usize) {
    let n = x.nrows();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut theta = DVector::zeros(x.ncols());
    theta[0] = logit(clip_prob(ybar));
    if ybar <= 0.0 || ybar >= 1.0 {
        // All outcomes equal: the intercept-only model at the clipped mean.
        return (theta, true, 0);
    }
    let (mut loss, mut eta) = weighted_logistic_loss(x, y, w, &theta);
    for iter in 1..=100 {
        let mut omega = vec![0.0; n];
        let mut resid = vec![0.0; n];
        for i in 0..n {
            let p = clip_prob(expit(eta[i]));
            omega[i] = w[i] * p * (1.0 - p);
            resid[i] = y[i] - p;
        }
        let wres: Vec<f64> = resid.iter().zip(w).map(|(r, w)| r * w).collect();
        let (h, _) = normal_equations(x, &omega, &resid);
        let g = x.transpose() * DVector::from_column_slice(&wres);
        let step = match h.cholesky() {
            Some(c) => c.solve(&g),
            None => return (theta, false, iter),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &theta + &step * t;
            let (l, e) = weighted_logistic_loss(x, y, w, &cand);
            if l <= loss {
                accepted = Some((cand, l, e));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, l, e)) = accepted else {
            return (theta, false, iter);
        };
        let change = loss - l;
        let max_step = (step.amax() * t).abs();
        theta = cand;
        loss = l;
        eta = e;
        if change <= 1e-12 * loss.abs().max(f64::MIN_POSITIVE) || max_step < 1e-10 {
            let saturated = eta.iter().any(|&e| {
                let p = expit(e);
                p <= crate::model::PROB_CLIP || p >= 1.0 - crate::model::PROB_CLIP
            });
            return (theta, !saturated, iter);
        }
    }
    (theta, false, 100)
}
