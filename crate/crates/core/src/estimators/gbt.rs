//! Gradient-boosted regression trees for squared loss.

use rand::seq::index::sample;

use super::tree::{build_tree, Features, MaxFeatures, RegressionTree, TreeParams};
use super::{EstimatorError, FeatureEncoding, FitData, HyperParams, Params};
use crate::seed::SeedTree;

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl GbtParams {
    pub fn from_hyperparams(hp: &HyperParams) -> Result<Self, EstimatorError> {
        let mut p = Params::new(hp);
        let out = Self {
            rounds: p.count("n_rounds", 100, 1)?,
            learning_rate: p.float_in("learning_rate", 0.1, 1e-12, 1.0)?,
            max_depth: p.count("max_depth", 6, 1)?,
            subsample: p.float_in("subsample", 1.0, 1e-6, 1.0)?,
            colsample: p.float_in("colsample", 1.0, 1e-6, 1.0)?,
            min_child_weight: p.float_in("min_child_weight", 1.0, 0.0, f64::INFINITY)?,
            gamma: p.float_in("gamma", 0.0, 0.0, f64::INFINITY)?,
            lambda: p.float_in("lambda", 1.0, 0.0, f64::INFINITY)?,
        };
        p.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    /// Training MSE after each round (index 0 is the constant base).
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }
}

pub fn fit_gbt(
    hp: &HyperParams,
    enc: &FeatureEncoding,
    train: &FitData<'_>,
    seed: &SeedTree,
) -> Result<GbtModel, EstimatorError> {
    let params = GbtParams::from_hyperparams(hp)?;
    let width = enc.width();
    let values = train.encoded(enc)?;
    let features = Features { values: &values, width };
    let y = train.targets();
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&pred)];
    let tree_params = TreeParams {
        max_depth: Some(params.max_depth),
        min_samples_split: 2,
        min_samples_leaf: 1,
        min_child_weight: params.min_child_weight,
        lambda: params.lambda,
        gamma: params.gamma,
        max_features: MaxFeatures::All,
    };
    let n_rows = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((params.colsample * width as f64).round() as usize).clamp(1, width);
    let mut rng = seed.child("gbt").rng();
    let mut trees = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let mut rows: Vec<usize> = if n_rows == n { (0..n).collect() } else { sample(&mut rng, n, n_rows).into_vec() };
        rows.sort_unstable();
        let mut cols: Vec<usize> = if n_cols == width { (0..width).collect() } else { sample(&mut rng, width, n_cols).into_vec() };
        cols.sort_unstable();
        let tree = build_tree(features, &residual, &rows, &cols, &tree_params, &mut rng);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict(&values[i * width..(i + 1) * width]);
        }
        train_loss.push(mse(&pred));
        trees.push(tree);
    }
    Ok(GbtModel { base, learning_rate: params.learning_rate, trees, train_loss })
}
