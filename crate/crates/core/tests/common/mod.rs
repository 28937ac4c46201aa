#![allow(dead_code)]

use hddr::Link;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A small penalized GLM problem.
pub struct Instance {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub pf: Vec<f64>,
    pub link: Link,
}

pub fn random_instance(seed: u64, link: Link, n: usize, p: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| {
        let z: f64 = rng.sample(StandardNormal);
        z * (0.5 + j as f64 * 0.3) + j as f64 * 0.7
    });
    let truth: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 0.8 } else { -0.4 }).collect();
    let y = (0..n)
        .map(|i| {
            let eta: f64 = 0.3 + (0..p).map(|j| truth[j] * (x[(i, j)] - j as f64 * 0.7)).sum::<f64>();
            match link {
                Link::Identity => eta + rng.sample::<f64, _>(StandardNormal),
                Link::Logit => (rng.random::<f64>() < hddr::expit(eta)) as u8 as f64,
            }
        })
        .collect();
    let w = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let pf = (0..p).map(|_| rng.random_range(0.5..2.0)).collect();
    Instance { x, y, w, pf, link }
}

fn weighted_sd(col: &[f64], w: &[f64]) -> f64 {
    let tot: f64 = w.iter().sum();
    let m = col.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / tot;
    (col.iter().zip(w).map(|(v, w)| w * (v - m) * (v - m)).sum::<f64>() / tot).sqrt()
}

fn mean_fn(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => eta,
        Link::Logit => 1.0 / (1.0 + (-eta).exp()),
    }
}

/// Objective on the original covariate scale:
/// `n^{-1} sum w_i loss_i + lambda sum pf_j sd_j |c_j|`, with `sd_j` the
/// weighted standard deviation of column `j`.
pub fn objective(inst: &Instance, lambda: f64, b0: f64, c: &[f64]) -> f64 {
    let n = inst.x.nrows();
    let mut s = 0.0;
    for i in 0..n {
        let eta = b0 + (0..c.len()).map(|j| inst.x[(i, j)] * c[j]).sum::<f64>();
        let y = inst.y[i];
        let l = match inst.link {
            Link::Identity => 0.5 * (y - eta) * (y - eta),
            Link::Logit => (1.0 + eta.exp()).ln() - y * eta,
        };
        s += inst.w[i] * l;
    }
    let pen: f64 = (0..c.len())
        .map(|j| inst.pf[j] * weighted_sd(inst.x.column(j).as_slice(), &inst.w) * c[j].abs())
        .sum();
    s / n as f64 + lambda * pen
}

/// Accelerated proximal gradient with adaptive restart, run to a fixed
/// point. Returns `(intercept, coef)`.
pub fn proximal_gradient(inst: &Instance, lambda: f64) -> (f64, Vec<f64>) {
    let (n, p) = (inst.x.nrows(), inst.x.ncols());
    let z = DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { 1.0 } else { inst.x[(i, k - 1)] });
    let wz = DMatrix::from_fn(n, p + 1, |i, k| inst.w[i] * z[(i, k)]);
    let h = z.tr_mul(&wz) / n as f64;
    let curvature = match inst.link {
        Link::Identity => 1.0,
        Link::Logit => 0.25,
    };
    let lip = h.symmetric_eigenvalues().max() * curvature;
    let step = 1.0 / lip;
    let thresh: Vec<f64> = (0..p)
        .map(|j| step * lambda * inst.pf[j] * weighted_sd(inst.x.column(j).as_slice(), &inst.w))
        .collect();

    let grad = |theta: &DVector<f64>| -> DVector<f64> {
        let eta = &z * theta;
        let r = DVector::from_fn(n, |i, _| inst.w[i] * (mean_fn(inst.link, eta[i]) - inst.y[i]));
        z.tr_mul(&r) / n as f64
    };
    let prox = |v: DVector<f64>| -> DVector<f64> {
        DVector::from_fn(p + 1, |k, _| {
            if k == 0 {
                v[0]
            } else {
                let t = thresh[k - 1];
                v[k].signum() * (v[k].abs() - t).max(0.0)
            }
        })
    };

    let mut theta = DVector::zeros(p + 1);
    let mut mom = theta.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let next = prox(&mom - grad(&mom) * step);
        let diff = (&next - &theta).amax();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        // Restart when the momentum points uphill.
        if (&mom - &next).dot(&(&next - &theta)) > 0.0 {
            t = 1.0;
            mom = next.clone();
        } else {
            mom = &next + (&next - &theta) * ((t - 1.0) / t_next);
            t = t_next;
        }
        theta = next;
        if diff < 1e-14 {
            break;
        }
    }
    (theta[0], theta.iter().skip(1).copied().collect())
}

pub struct OracleSummary {
    pub instances: usize,
    pub max_coef_diff: f64,
    pub max_kkt: f64,
    pub converged: usize,
}

/// Coordinate descent against the proximal-gradient oracle on 50 random
/// instances with `n <= 50`, `p <= 5`, random weights and penalty factors,
/// half per link.
pub fn oracle_comparison() -> OracleSummary {
    let mut out = OracleSummary {
        instances: 0,
        max_coef_diff: 0.0,
        max_kkt: 0.0,
        converged: 0,
    };
    for seed in 0..50u64 {
        let link = if seed % 2 == 0 { Link::Identity } else { Link::Logit };
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(25..=50);
        let p = rng.random_range(1..=5);
        let inst = random_instance(seed, link, n, p);
        let opts = hddr::glm::LassoOptions {
            penalty_factor: Some(inst.pf.clone()),
        };
        let lmax = hddr::glm::lambda_max(&inst.x, &inst.y, &inst.w, link, &opts).unwrap();
        let lambda = lmax * rng.random_range(0.05..0.9);
        let fit = hddr::glm::fit_lasso(&inst.x, &inst.y, &inst.w, link, lambda, &opts).unwrap();
        let (b0, c) = proximal_gradient(&inst, lambda);
        let mut diff = (fit.model.intercept - b0).abs();
        for j in 0..p {
            diff = diff.max((fit.model.coef[j] - c[j]).abs());
        }
        out.max_coef_diff = out.max_coef_diff.max(diff);
        if fit.converged {
            out.converged += 1;
            let kkt = hddr::glm::kkt_check(&fit, &inst.x, &inst.y, &inst.w, link);
            out.max_kkt = out.max_kkt.max(kkt);
        }
        out.instances += 1;
    }
    out
}
