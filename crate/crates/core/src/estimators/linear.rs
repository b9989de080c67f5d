//! Linear-in-parameters families: ridge regression on the encoded rows and
//! an additive model over per-feature cubic spline bases.

use nalgebra::{DMatrix, DVector};

use super::{EstimatorError, FeatureEncoding, FitData, HyperParams, Params};

/// Solves the ridge problem with an unpenalized intercept. `design` is
/// row-major `n x p`. Rank-deficient systems (e.g. a one-hot block plus the
/// intercept at lambda = 0) get the minimum-norm solution.
pub fn ridge_solve(design: &[f64], n: usize, p: usize, y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let x = DMatrix::from_row_slice(n, p, design);
    let col_means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = x;
    for j in 0..p {
        let m = col_means[j];
        xc.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let scale = gram.diagonal().amax().max(1.0);
    let svd = gram.svd(true, true);
    let beta = svd.solve(&rhs, 1e-12 * scale).expect("both factors computed");
    let intercept = y_mean - beta.iter().zip(&col_means).map(|(b, m)| b * m).sum::<f64>();
    (beta.iter().copied().collect(), intercept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, v)| c * v).sum::<f64>()
    }
}

pub fn fit_ridge(hp: &HyperParams, enc: &FeatureEncoding, train: &FitData<'_>) -> Result<RidgeModel, EstimatorError> {
    let mut p = Params::new(hp);
    let lambda = p.float_in("lambda", 0.0, 0.0, f64::INFINITY)?;
    p.finish()?;
    let design = train.encoded(enc)?;
    let (coef, intercept) = ridge_solve(&design, train.len(), enc.width(), &train.targets(), lambda);
    Ok(RidgeModel { coef, intercept, lambda })
}

/// Basis expansion of one input feature.
#[derive(Debug, Clone, PartialEq)]
enum FeatureBasis {
    /// Features with at most two distinct training values enter linearly.
    Linear,
    /// `s, s^2, s^3, (s - k_j)_+^3` on the min-max scaled feature.
    Cubic { lo: f64, span: f64, knots: Vec<f64> },
}

impl FeatureBasis {
    fn width(&self) -> usize {
        match self {
            FeatureBasis::Linear => 1,
            FeatureBasis::Cubic { knots, .. } => 3 + knots.len(),
        }
    }

    fn expand(&self, v: f64, out: &mut Vec<f64>) {
        match self {
            FeatureBasis::Linear => out.push(v),
            FeatureBasis::Cubic { lo, span, knots } => {
                let s = (v - lo) / span;
                out.extend([s, s * s, s * s * s]);
                out.extend(knots.iter().map(|k| (s - k).max(0.0).powi(3)));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineAdditiveModel {
    bases: Vec<FeatureBasis>,
    coef: Vec<f64>,
    intercept: f64,
}

impl SplineAdditiveModel {
    fn expand_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coef.len());
        for (b, &v) in self.bases.iter().zip(row) {
            b.expand(v, &mut out);
        }
        out
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.expand_row(row).iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Interior knots at the `j / (n_knots + 1)` empirical quantiles of the
/// scaled training values, deduplicated.
fn quantile_knots(sorted_scaled: &[f64], n_knots: usize) -> Vec<f64> {
    let n = sorted_scaled.len();
    let mut knots: Vec<f64> = (1..=n_knots)
        .map(|j| {
            let pos = j as f64 / (n_knots + 1) as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let hi = (lo + 1).min(n - 1);
            sorted_scaled[lo] * (1.0 - frac) + sorted_scaled[hi] * frac
        })
        .filter(|k| *k > 0.0 && *k < 1.0)
        .collect();
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    knots
}

pub fn fit_spline_additive(
    hp: &HyperParams,
    enc: &FeatureEncoding,
    train: &FitData<'_>,
) -> Result<SplineAdditiveModel, EstimatorError> {
    let mut p = Params::new(hp);
    let n_knots = p.count("n_knots", 8, 0)?;
    p.finish()?;
    let width = enc.width();
    let design = train.encoded(enc)?;
    let n = train.len();
    let bases: Vec<FeatureBasis> = (0..width)
        .map(|j| {
            let mut col: Vec<f64> = (0..n).map(|i| design[i * width + j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            let mut distinct = col.clone();
            distinct.dedup();
            if distinct.len() <= 2 {
                return FeatureBasis::Linear;
            }
            let lo = col[0];
            let span = col[n - 1] - lo;
            let scaled: Vec<f64> = col.iter().map(|v| (v - lo) / span).collect();
            FeatureBasis::Cubic { lo, span, knots: quantile_knots(&scaled, n_knots) }
        })
        .collect();
    let p_total: usize = bases.iter().map(FeatureBasis::width).sum();
    let mut expanded = Vec::with_capacity(n * p_total);
    for i in 0..n {
        for (b, &v) in bases.iter().zip(&design[i * width..(i + 1) * width]) {
            b.expand(v, &mut expanded);
        }
    }
    let (coef, intercept) = ridge_solve(&expanded, n, p_total, &train.targets(), 0.0);
    Ok(SplineAdditiveModel { bases, coef, intercept })
}
