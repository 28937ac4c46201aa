use nalgebra::DMatrix;

/// Covariates standardized to weighted mean 0 and weighted variance 1,
/// stored column-major. Columns with zero weighted variance are flagged
/// degenerate and never enter the fit.
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Standardized {
    pub fn new(covariates: &DMatrix<f64>, weights: &[f64]) -> Self {
        let n = covariates.nrows();
        let p = covariates.ncols();
        let raw = covariates.as_slice();
        let total: f64 = weights.iter().sum();
        let mut x = vec![0.0; n * p];
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut degenerate = vec![false; p];
        for j in 0..p {
            let col = &raw[j * n..(j + 1) * n];
            let m = col.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
            let var = col
                .iter()
                .zip(weights)
                .map(|(v, w)| w * (v - m) * (v - m))
                .sum::<f64>()
                / total;
            mean[j] = m;
            let max_abs = col.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if var <= 1e-24 * max_abs * max_abs {
                degenerate[j] = true;
                continue;
            }
            let s = var.sqrt();
            scale[j] = s;
            for (dst, v) in x[j * n..(j + 1) * n].iter_mut().zip(col) {
                *dst = (v - m) / s;
            }
        }
        Standardized {
            n,
            p,
            x,
            mean,
            scale,
            degenerate,
        }
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    /// Converts standardized-scale coefficients to `(intercept, coef)` on
    /// the original covariate scale.
    pub fn to_original(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = b0;
        let coef: Vec<f64> = beta
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                if b == 0.0 {
                    0.0
                } else {
                    let c = b / self.scale[j];
                    intercept -= c * self.mean[j];
                    c
                }
            })
            .collect();
        (intercept, coef)
    }

    /// Inverse of [`Standardized::to_original`].
    pub fn to_standardized(&self, intercept: f64, coef: &[f64]) -> (f64, Vec<f64>) {
        let mut b0 = intercept;
        let beta = coef
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                if c == 0.0 || self.degenerate[j] {
                    0.0
                } else {
                    b0 += c * self.mean[j];
                    c * self.scale[j]
                }
            })
            .collect();
        (b0, beta)
    }

    pub fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.col(j)) {
                    *e += b * x;
                }
            }
        }
        eta
    }
}
