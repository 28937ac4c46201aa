//! Regression comparators: naive post-selection t-tests and
//! post-double selection, both with cross-validated penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{cv_lasso, independent_columns, CvSpec, LassoOptions};
use crate::model::{validate_dataset, Dataset, Link};
use crate::nuisance::{self, Step};
use crate::score::{normal_two_sided, student_two_sided, Diagnostics, Reference, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    NaiveForced,
    NaiveUnforced,
    PdsCv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparatorSpec {
    pub kind: ComparatorKind,
    pub k_folds: usize,
    pub seed: u64,
}

pub fn run_comparator(d: &Dataset, spec: &ComparatorSpec) -> Result<TestResult> {
    match spec.kind {
        ComparatorKind::NaiveForced => naive_post_selection_test(d, true, spec.k_folds, spec.seed),
        ComparatorKind::NaiveUnforced => naive_post_selection_test(d, false, spec.k_folds, spec.seed),
        ComparatorKind::PdsCv => pds_cv_test(d, spec.k_folds, spec.seed),
    }
}

/// OLS of `y` on an intercept, `a` and the given covariate columns.
/// Covariates collinear with earlier columns are dropped; the exposure
/// comes first, so it is kept unless it is constant.
struct Ols {
    /// Intercept, exposure, then the kept covariates.
    coef: DVector<f64>,
    resid: Vec<f64>,
    xtx_inv: DMatrix<f64>,
    z: DMatrix<f64>,
}

fn ols_with_exposure(d: &Dataset, cols: &[usize]) -> Result<Ols> {
    let n = d.n();
    let mut cand = DMatrix::zeros(n, cols.len() + 1);
    cand.set_column(0, &DVector::from_column_slice(&d.a));
    for (k, &j) in cols.iter().enumerate() {
        cand.set_column(k + 1, &DVector::from_column_slice(d.column(j)));
    }
    let all: Vec<usize> = (0..=cols.len()).collect();
    let (kept, _) = independent_columns(&cand, &vec![1.0; n], &all);
    if kept.first() != Some(&0) {
        return Err(Error::Singular);
    }
    if kept.len() + 1 >= n {
        return Err(Error::SupportTooLarge {
            support: kept.len(),
            n,
        });
    }
    let z = DMatrix::from_fn(n, kept.len() + 1, |i, k| if k == 0 { 1.0 } else { cand[(i, kept[k - 1])] });
    let xtx = z.tr_mul(&z);
    let chol = xtx.cholesky().ok_or(Error::Singular)?;
    let y = DVector::from_column_slice(&d.y);
    let coef = chol.solve(&z.tr_mul(&y));
    let fitted = &z * &coef;
    let resid = (0..n).map(|i| d.y[i] - fitted[i]).collect();
    Ok(Ols {
        coef,
        resid,
        xtx_inv: chol.inverse(),
        z,
    })
}

impl Ols {
    fn k(&self) -> usize {
        self.z.ncols()
    }

    fn df(&self) -> usize {
        self.z.nrows() - self.k()
    }

    fn classical_se(&self) -> f64 {
        let rss: f64 = self.resid.iter().map(|e| e * e).sum();
        (rss / self.df() as f64 * self.xtx_inv[(1, 1)]).sqrt()
    }

    /// HC1: `n/(n-k) (Z'Z)^{-1} Z' diag(e^2) Z (Z'Z)^{-1}`.
    fn hc1_se(&self) -> f64 {
        let n = self.z.nrows();
        // Only the exposure row of (Z'Z)^{-1} Z' is needed.
        let row = self.xtx_inv.row(1);
        let mut s = 0.0;
        for i in 0..n {
            let c: f64 = (0..self.k()).map(|k| row[k] * self.z[(i, k)]).sum();
            s += c * c * self.resid[i] * self.resid[i];
        }
        (s * n as f64 / self.df() as f64).sqrt()
    }
}

fn regression_result(method: &str, n: usize, estimate: f64, se: f64, reference: Reference, diagnostics: Diagnostics) -> Result<TestResult> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::ZeroVariance);
    }
    let t = estimate / se;
    let p_value = match reference {
        Reference::Normal => normal_two_sided(t),
        Reference::StudentT { df } => student_two_sided(t, df)?,
    };
    Ok(TestResult {
        t_n: t,
        p_value,
        n,
        score_mean: estimate,
        score_sd: se * (n as f64).sqrt(),
        method: method.to_string(),
        reference,
        diagnostics: Diagnostics {
            estimate: Some(estimate),
            std_error: Some(se),
            ..diagnostics
        },
    })
}

/// Lasso of `Y` on `(A, L)` with a CV penalty, then OLS of `Y` on `A` and
/// the selected covariates with a classical t-test on `A`. When forced,
/// `A` is unpenalized. An unselected `A` is put back into the refit so a
/// test is always produced.
pub fn naive_post_selection_test(d: &Dataset, forced: bool, k_folds: usize, seed: u64) -> Result<TestResult> {
    validate_dataset(d, Link::Identity, Link::Identity)?;
    let (n, p) = (d.n(), d.p());
    let mut x = DMatrix::zeros(n, p + 1);
    x.set_column(0, &DVector::from_column_slice(&d.a));
    x.view_mut((0, 1), (n, p)).copy_from(&d.covariates);
    let mut pf = vec![1.0; p + 1];
    if forced {
        pf[0] = 0.0;
    }
    let mut spec = CvSpec::new(k_folds, seed);
    spec.options = LassoOptions {
        penalty_factor: Some(pf),
    };
    let cv = cv_lasso(&x, &d.y, &vec![1.0; n], Link::Identity, &spec)?;
    let support = cv.fit.support();
    let selected: Vec<usize> = support.iter().filter(|&&j| j > 0).map(|&j| j - 1).collect();
    let ols = ols_with_exposure(d, &selected)?;
    let name = if forced { "naive-forced" } else { "naive-unforced" };
    regression_result(
        name,
        n,
        ols.coef[1],
        ols.classical_se(),
        Reference::StudentT { df: ols.df() as f64 },
        Diagnostics {
            outcome_support: Some(selected),
            lambda_beta: Some(cv.fit.lambda),
            converged: cv.fit.converged,
            exposure_selected: Some(support.first() == Some(&0)),
            ..Diagnostics::default()
        },
    )
}

/// Sorted union of two index sets.
pub fn support_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Post-double selection from the penalized exposure and outcome steps.
pub fn pds_from_steps(d: &Dataset, exposure: &Step, outcome: &Step) -> Result<TestResult> {
    let n = d.n();
    let s_gamma = exposure.fit.support();
    let s_beta = outcome.fit.support();
    let union = support_union(&s_beta, &s_gamma);
    if union.len() + 2 >= n {
        return Err(Error::UnionTooLarge { union: union.len(), n });
    }
    let ols = ols_with_exposure(d, &union)?;
    regression_result(
        "pds-cv",
        n,
        ols.coef[1],
        ols.hc1_se(),
        Reference::Normal,
        Diagnostics {
            exposure_support: Some(s_gamma),
            outcome_support: Some(s_beta),
            lambda_gamma: Some(exposure.fit.lambda),
            lambda_beta: Some(outcome.fit.lambda),
            converged: exposure.fit.converged && outcome.fit.converged,
            ..Diagnostics::default()
        },
    )
}

/// CV lasso of `Y` on `L` and CV logistic lasso of `A` on `L`; OLS of `Y`
/// on `A` and the union of the two supports, with an HC1 sandwich t-test.
pub fn pds_cv_test(d: &Dataset, k_folds: usize, seed: u64) -> Result<TestResult> {
    validate_dataset(d, Link::Logit, Link::Identity)?;
    let e = nuisance::exposure_step(d, k_folds, seed)?;
    let o = nuisance::outcome_step(d, Link::Identity, k_folds, seed)?;
    pds_from_steps(d, &e, &o)
}
