//! Metrics and diagnostics: MISE by trapezoidal quadrature, factual MSE,
//! per-dose error profiles, distribution diagnostics and cross-seed
//! aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CovariateMatrix, ScenarioDataset, ScenarioId};
use crate::dgp::ResponseSurface;
use crate::estimators::{EstimatorError, Query, TrainedModel};
use crate::stats;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dose grid: {0}")]
    Grid(String),
    #[error("empty evaluation set")]
    Empty,
    #[error("prediction failed: {0}")]
    Prediction(#[from] EstimatorError),
    #[error("model produced a non-finite prediction at t = {t}, d = {d}")]
    NonFinite { t: usize, d: f64 },
}

/// Anything that answers batched `mu_hat` queries.
pub trait Predictor {
    fn predict_queries(&self, queries: &[Query<'_>]) -> Result<Vec<f64>, EstimatorError>;
}

impl Predictor for TrainedModel {
    fn predict_queries(&self, queries: &[Query<'_>]) -> Result<Vec<f64>, EstimatorError> {
        self.predict_batch(queries)
    }
}

/// Adapts a closure `(x, t, d) -> mu_hat`.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64], usize, f64) -> f64> Predictor for FnPredictor<F> {
    fn predict_queries(&self, queries: &[Query<'_>]) -> Result<Vec<f64>, EstimatorError> {
        Ok(queries.iter().map(|q| (self.0)(q.x, q.t, q.d)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    points: Vec<f64>,
}

impl DoseGrid {
    pub const DEFAULT_POINTS: usize = 65;

    /// `count` equally spaced points from 0 to 1 inclusive.
    pub fn uniform(count: usize) -> Result<Self, EvalError> {
        if count < 2 {
            return Err(EvalError::Grid(format!("need at least 2 points, got {count}")));
        }
        Ok(Self { points: (0..count).map(|i| i as f64 / (count - 1) as f64).collect() })
    }

    pub fn new(points: Vec<f64>) -> Result<Self, EvalError> {
        if points.len() < 2 {
            return Err(EvalError::Grid("need at least 2 points".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EvalError::Grid("points must be strictly increasing".into()));
        }
        if points[0] < 0.0 || points[points.len() - 1] > 1.0 {
            return Err(EvalError::Grid("points must lie in [0, 1]".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Composite trapezoidal rule for samples `f` taken at the grid points.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.points.windows(2).zip(f.windows(2)).map(|(d, v)| 0.5 * (d[1] - d[0]) * (v[0] + v[1])).sum()
    }
}

impl Default for DoseGrid {
    fn default() -> Self {
        Self::uniform(Self::DEFAULT_POINTS).expect("valid default")
    }
}

/// Squared CADR errors on the grid, laid out `[unit][t][grid point]`.
fn grid_errors(
    model: &dyn Predictor,
    response: &dyn ResponseSurface,
    x: &CovariateMatrix,
    rows: &[usize],
    k: usize,
    grid: &DoseGrid,
) -> Result<Vec<f64>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut queries = Vec::with_capacity(rows.len() * k * grid.len());
    for &i in rows {
        for t in 0..k {
            queries.extend(grid.points().iter().map(|&d| Query { x: x.row(i), t, d }));
        }
    }
    let preds = model.predict_queries(&queries)?;
    queries
        .iter()
        .zip(preds)
        .map(|(q, p)| {
            if !p.is_finite() {
                return Err(EvalError::NonFinite { t: q.t, d: q.d });
            }
            Ok((response.evaluate(q.t, q.d, q.x) - p).powi(2))
        })
        .collect()
}

/// Mean integrated squared error over units `rows` and all `k` interventions.
pub fn mise(
    model: &dyn Predictor,
    response: &dyn ResponseSurface,
    x: &CovariateMatrix,
    rows: &[usize],
    k: usize,
    grid: &DoseGrid,
) -> Result<f64, EvalError> {
    let errors = grid_errors(model, response, x, rows, k, grid)?;
    let total: f64 = errors.chunks(grid.len()).map(|curve| grid.integrate(curve)).sum();
    Ok(total / (rows.len() * k) as f64)
}

/// Mean squared error on observed outcomes of `rows`.
pub fn factual_mse(model: &dyn Predictor, ds: &ScenarioDataset, rows: &[usize]) -> Result<f64, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let queries: Vec<Query<'_>> = rows.iter().map(|&i| Query { x: ds.x.row(i), t: ds.t[i], d: ds.d[i] }).collect();
    let preds = model.predict_queries(&queries)?;
    let mut total = 0.0;
    for (&i, p) in rows.iter().zip(preds) {
        if !p.is_finite() {
            return Err(EvalError::NonFinite { t: ds.t[i], d: ds.d[i] });
        }
        total += (ds.y[i] - p).powi(2);
    }
    Ok(total / rows.len() as f64)
}

/// Bin index of a dose among `bins` equal-width bins on [0, 1].
pub fn dose_bin(d: f64, bins: usize) -> usize {
    ((d.max(0.0) * bins as f64).floor() as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseErrorProfile {
    pub bins: usize,
    /// `errors[t][b]`: mean squared CADR error over test units and grid
    /// points inside bin b (NaN when no grid point falls in the bin).
    pub errors: Vec<Vec<f64>>,
    /// `counts[t][b]`: training units with intervention t and dose in bin b.
    pub counts: Vec<Vec<usize>>,
}

impl DoseErrorProfile {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|b| b as f64 / self.bins as f64).collect()
    }
}

pub fn dose_error_profile(
    model: &dyn Predictor,
    response: &dyn ResponseSurface,
    ds: &ScenarioDataset,
    grid: &DoseGrid,
    bins: usize,
) -> Result<DoseErrorProfile, EvalError> {
    if bins < 2 {
        return Err(EvalError::Grid(format!("need at least 2 bins, got {bins}")));
    }
    let k = ds.space.k();
    let rows = &ds.splits.test;
    let errors = grid_errors(model, response, &ds.x, rows, k, grid)?;
    let g = grid.len();
    let mut sums = vec![vec![0.0; bins]; k];
    let mut hits = vec![vec![0usize; bins]; k];
    for (u, _) in rows.iter().enumerate() {
        for t in 0..k {
            for (j, &d) in grid.points().iter().enumerate() {
                let b = dose_bin(d, bins);
                sums[t][b] += errors[(u * k + t) * g + j];
                hits[t][b] += 1;
            }
        }
    }
    let errors = sums
        .iter()
        .zip(&hits)
        .map(|(s, h)| s.iter().zip(h).map(|(s, &h)| if h > 0 { s / h as f64 } else { f64::NAN }).collect())
        .collect();
    let mut counts = vec![vec![0usize; bins]; k];
    for &i in &ds.splits.train {
        counts[ds.t[i]][dose_bin(ds.d[i], bins)] += 1;
    }
    Ok(DoseErrorProfile { bins, errors, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityStat {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Kolmogorov-Smirnov test of doses against Uniform[0, 1] at level 0.01.
pub fn dose_uniformity(doses: &[f64]) -> UniformityStat {
    let mut v = doses.to_vec();
    let statistic = stats::ks_uniform(&mut v);
    let critical = stats::ks_critical_001(doses.len());
    UniformityStat { statistic, critical, pass: statistic <= critical }
}

/// Chi-square test of intervention labels against uniform at level 0.01.
pub fn intervention_uniformity(labels: &[usize], k: usize) -> UniformityStat {
    let statistic = stats::chi_square_uniform(labels, k);
    let critical = if k > 1 { stats::chi_square_critical_001(k - 1) } else { 0.0 };
    UniformityStat { statistic, critical, pass: statistic <= critical }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnAssociation {
    pub column: String,
    /// |Pearson correlation| between the column and the dose.
    pub dose_corr: f64,
    /// Largest minus smallest per-intervention column mean (k > 1 only).
    pub label_gap: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingRecord {
    pub threshold: f64,
    pub columns: Vec<ColumnAssociation>,
}

impl ConfoundingRecord {
    pub fn flagged(&self) -> impl Iterator<Item = &ColumnAssociation> {
        self.columns.iter().filter(|c| c.flagged)
    }
}

/// Covariate/dose association per column; flags |corr| > 4/sqrt(n).
pub fn confounding_diagnostic(ds: &ScenarioDataset) -> ConfoundingRecord {
    let n = ds.n();
    let k = ds.space.k();
    let threshold = 4.0 / (n as f64).sqrt();
    let columns = (0..ds.x.cols())
        .map(|j| {
            let col = ds.x.column(j);
            let dose_corr = stats::pearson(&col, &ds.d).abs();
            let label_gap = (k > 1).then(|| {
                let mut sums = vec![(0.0, 0usize); k];
                for (v, &t) in col.iter().zip(&ds.t) {
                    sums[t].0 += v;
                    sums[t].1 += 1;
                }
                let means: Vec<f64> = sums.iter().filter(|s| s.1 > 0).map(|s| s.0 / s.1 as f64).collect();
                let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
                if means.is_empty() { 0.0 } else { hi - lo }
            });
            ColumnAssociation { column: ds.x.names()[j].clone(), dose_corr, label_gap, flagged: dose_corr > threshold }
        })
        .collect();
    ConfoundingRecord { threshold, columns }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub mise: f64,
    pub factual_mse: f64,
    pub fit_seconds: f64,
}

impl MetricBundle {
    pub fn failed() -> Self {
        Self { mise: f64::NAN, factual_mse: f64::NAN, fit_seconds: f64::NAN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub done: usize,
    pub failed: usize,
}

impl Aggregate {
    pub fn total(&self) -> usize {
        self.done + self.failed
    }

    /// Annotation for groups with failures, e.g. "4/5 done".
    pub fn note(&self) -> Option<String> {
        (self.failed > 0).then(|| format!("{}/{} done", self.done, self.total()))
    }
}

/// Mean and sample standard deviation per (estimator, scenario); `None`
/// values are failed cells. Values are sorted before summation so the result
/// does not depend on cell order.
pub fn aggregate<'a>(
    cells: impl IntoIterator<Item = (&'a str, ScenarioId, Option<f64>)>,
) -> BTreeMap<(String, ScenarioId), Aggregate> {
    let mut groups: BTreeMap<(String, ScenarioId), (Vec<f64>, usize)> = BTreeMap::new();
    for (est, scenario, value) in cells {
        let g = groups.entry((est.to_string(), scenario)).or_default();
        match value {
            Some(v) if v.is_finite() => g.0.push(v),
            _ => g.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(key, (mut values, failed))| {
            values.sort_by(f64::total_cmp);
            let (mean, std) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (stats::mean(&values), stats::sample_std(&values))
            };
            (key, Aggregate { mean, std, done: values.len(), failed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InterventionSpace, SplitIndices};
    use crate::dgp::FnSurface;
    use crate::seed::SeedTree;
    use rand::Rng as _;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn matrix(n: usize, m: usize, seed: u64) -> CovariateMatrix {
        let mut rng = SeedTree::new(seed).rng();
        let vals = (0..n * m).map(|_| rng.random::<f64>()).collect();
        CovariateMatrix::new((0..m).map(|j| format!("x{j}")).collect(), vals, BTreeSet::new()).unwrap()
    }

    fn dataset(x: CovariateMatrix, k: usize, t: Vec<usize>, d: Vec<f64>, y: Vec<f64>) -> ScenarioDataset {
        let n = x.rows();
        let train: Vec<usize> = (0..n / 2).collect();
        let test: Vec<usize> = (n / 2..n).collect();
        ScenarioDataset {
            scenario: ScenarioId::Randomized,
            x: Arc::new(x),
            space: InterventionSpace::with_count(k).unwrap(),
            t,
            d,
            y,
            splits: Arc::new(SplitIndices { train, val: vec![], test }),
            seed_record: SeedTree::new(0),
        }
    }

    #[test]
    fn mise_closed_forms() {
        let x = matrix(4, 2, 1);
        let rows: Vec<usize> = (0..4).collect();
        let grid = DoseGrid::default();
        let zero = FnPredictor(|_: &[f64], _: usize, _: f64| 0.0);
        let linear = FnSurface(|_: usize, d: f64, _: &[f64]| d);
        let v = mise(&zero, &linear, &x, &rows, 1, &grid).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-3, "{v}");
        // Error only under the first intervention.
        let half = FnSurface(|t: usize, d: f64, _: &[f64]| if t == 0 { d } else { 0.0 });
        let v = mise(&zero, &half, &x, &rows, 2, &grid).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-3, "{v}");
        let perfect = FnPredictor(|_: &[f64], t: usize, d: f64| if t == 0 { d } else { 0.0 });
        assert_eq!(mise(&perfect, &half, &x, &rows, 2, &grid).unwrap(), 0.0);
    }

    #[test]
    fn trapezoid_matches_quadratic_error_bound() {
        let grid = DoseGrid::uniform(65).unwrap();
        let f: Vec<f64> = grid.points().iter().map(|d| d * d).collect();
        let h = 1.0 / 64.0;
        // Exact error of the composite rule for d^2 is h^2 / 6.
        assert!((grid.integrate(&f) - (1.0 / 3.0 + h * h / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn mise_matches_monte_carlo() {
        let mut rng = SeedTree::new(11).rng();
        for case in 0..5u64 {
            let x = matrix(6, 3, case);
            let rows: Vec<usize> = (0..6).collect();
            let (a, b, c) = (rng.random::<f64>() * 3.0, rng.random::<f64>() * 5.0, rng.random::<f64>());
            let surface = FnSurface(move |t: usize, d: f64, x: &[f64]| (a * d + x[0]).sin() + t as f64 * c * d * d);
            let model = FnPredictor(move |x: &[f64], t: usize, d: f64| b * d * x[1] - 0.5 + 0.1 * t as f64);
            let k = 2;
            let exact = mise(&model, &surface, &x, &rows, k, &DoseGrid::uniform(513).unwrap()).unwrap();
            let coarse = mise(&model, &surface, &x, &rows, k, &DoseGrid::default()).unwrap();
            let draws = 100_000;
            let mut samples = Vec::with_capacity(draws);
            let mut mc = SeedTree::new(100 + case).rng();
            for _ in 0..draws {
                let i = mc.random_range(0..6);
                let t = mc.random_range(0..k);
                let d: f64 = mc.random();
                let row = x.row(i);
                samples.push((surface.evaluate(t, d, row) - (model.0)(row, t, d)).powi(2));
            }
            let m = stats::mean(&samples);
            let se = stats::sample_std(&samples) / (draws as f64).sqrt();
            assert!((coarse - m).abs() < 2.0 * se + 1e-3 * exact, "case {case}: {coarse} vs {m} ± {se}");
        }
    }

    #[test]
    fn factual_mse_identities() {
        let x = matrix(200, 2, 3);
        let mut rng = SeedTree::new(4).rng();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 4.0).collect();
        let ds = dataset(x, 1, vec![0; 200], vec![0.5; 200], y.clone());
        let rows: Vec<usize> = (0..200).collect();
        let mean = stats::mean(&y);
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        let constant = FnPredictor(move |_: &[f64], _: usize, _: f64| mean);
        assert!((factual_mse(&constant, &ds, &rows).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn profile_bins_and_counts() {
        let n = 4000;
        let x = matrix(n, 2, 5);
        let mut rng = SeedTree::new(6).rng();
        let d: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let ds = dataset(x, 2, (0..n).map(|i| i % 2).collect(), d, vec![0.0; n]);
        let surface = FnSurface(|_: usize, d: f64, _: &[f64]| if d > 0.5 { d } else { 0.0 });
        let zero = FnPredictor(|_: &[f64], _: usize, _: f64| 0.0);
        let p = dose_error_profile(&zero, &surface, &ds, &DoseGrid::default(), 2).unwrap();
        assert!(p.errors[0][1] > p.errors[0][0]);
        let p = dose_error_profile(&zero, &surface, &ds, &DoseGrid::default(), 10).unwrap();
        for t in 0..2 {
            let per_t = ds.splits.train.iter().filter(|&&i| ds.t[i] == t).count();
            assert_eq!(p.counts[t].iter().sum::<usize>(), per_t);
            let expect = per_t as f64 / 10.0;
            let sd = (per_t as f64 * 0.1 * 0.9).sqrt();
            for &c in &p.counts[t] {
                assert!((c as f64 - expect).abs() < 4.0 * sd + 1.0, "{c} vs {expect}");
            }
        }
        let exact = FnPredictor(|_: &[f64], _: usize, d: f64| if d > 0.5 { d } else { 0.0 });
        let p = dose_error_profile(&exact, &surface, &ds, &DoseGrid::default(), 10).unwrap();
        assert!(p.errors.iter().flatten().all(|e| *e == 0.0));
    }

    #[test]
    fn uniformity_examples() {
        let n = 1000;
        let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let s = dose_uniformity(&grid);
        assert!((s.statistic - 0.5 / n as f64).abs() < 1e-12);
        assert!(s.pass);
        let s = dose_uniformity(&vec![0.5; n]);
        assert!((s.statistic - 0.5).abs() < 1e-12);
        assert!(!s.pass);
        let s = intervention_uniformity(&vec![0; 50], 1);
        assert_eq!(s.statistic, 0.0);
        assert!(s.pass);
    }

    #[test]
    fn confounding_flags() {
        let n = 10_000;
        let mut x = matrix(n, 3, 7);
        let d = x.column(0);
        let mut vals = x.values().to_vec();
        for i in 0..n {
            vals[i * 3 + 2] = 1.0;
        }
        x = CovariateMatrix::new(x.names().to_vec(), vals, BTreeSet::new()).unwrap();
        let ds = dataset(x, 2, (0..n).map(|i| i % 2).collect(), d, vec![0.0; n]);
        let rec = confounding_diagnostic(&ds);
        assert!(rec.columns[0].flagged);
        assert!((rec.columns[0].dose_corr - 1.0).abs() < 1e-12);
        assert!(!rec.columns[1].flagged);
        assert_eq!(rec.columns[2].dose_corr, 0.0);
    }

    #[test]
    fn aggregation_rules() {
        let r = ScenarioId::Randomized;
        let a = aggregate([("a", r, Some(1.0)), ("a", r, Some(1.0)), ("a", r, Some(1.0))]);
        assert_eq!(a[&("a".into(), r)].mean, 1.0);
        assert_eq!(a[&("a".into(), r)].std, 0.0);
        let a = aggregate([("a", r, Some(1.0)), ("a", r, Some(2.0)), ("a", r, Some(3.0))]);
        assert_eq!((a[&("a".into(), r)].mean, a[&("a".into(), r)].std), (2.0, 1.0));
        let a = aggregate([("a", r, Some(1.0)), ("a", r, None), ("a", r, Some(2.0)), ("a", r, Some(3.0)), ("a", r, Some(4.0))]);
        let g = &a[&("a".into(), r)];
        assert_eq!((g.done, g.failed), (4, 1));
        assert_eq!(g.note().unwrap(), "4/5 done");
        let a = aggregate([("b", r, None)]);
        assert!(a[&("b".into(), r)].mean.is_nan());
    }

    proptest::proptest! {
        #[test]
        fn aggregation_is_order_invariant(mut values in proptest::collection::vec(-1e3f64..1e3, 1..20), rot in 0usize..20) {
            let r = ScenarioId::DConfounded;
            let a = aggregate(values.iter().map(|v| ("e", r, Some(*v))));
            let shift = rot % values.len();
            values.rotate_left(shift);
            values.reverse();
            let b = aggregate(values.iter().map(|v| ("e", r, Some(*v))));
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn mise_is_nonnegative(c in -5.0f64..5.0, s in -5.0f64..5.0) {
            let x = matrix(3, 2, 0);
            let surface = FnSurface(move |_: usize, d: f64, _: &[f64]| s * d);
            let model = FnPredictor(move |_: &[f64], _: usize, _: f64| c);
            let v = mise(&model, &surface, &x, &[0, 1, 2], 1, &DoseGrid::default()).unwrap();
            proptest::prop_assert!(v >= 0.0);
            proptest::prop_assert_eq!(v == 0.0, c == 0.0 && s == 0.0);
        }
    }
}
