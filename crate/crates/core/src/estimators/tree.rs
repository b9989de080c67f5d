//! Greedy binary regression trees.
//!
//! One builder serves both the standalone CART family and the boosting
//! rounds. A node with target sum `S` over `n` rows scores `S^2 / (n + lambda)`;
//! a split gains half the increase in that score. With `lambda = 0` the
//! gain is half the reduction in sum of squared errors, i.e. plain variance
//! reduction.

use rand::seq::index::sample;

use super::{EstimatorError, FeatureEncoding, FitData, HyperParams, Params};
use crate::seed::{Rng, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxFeatures {
    All,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Minimum number of rows (unit hessians) on each side of a split.
    pub min_child_weight: f64,
    pub lambda: f64,
    /// Minimum gain for a split to be kept.
    pub gamma: f64,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            min_child_weight: 0.0,
            lambda: 0.0,
            gamma: 0.0,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Row-major feature matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub values: &'a [f64],
    pub width: usize,
}

impl Features<'_> {
    fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }
}

struct Builder<'a> {
    features: Features<'a>,
    targets: &'a [f64],
    allowed: &'a [usize],
    params: &'a TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let s: f64 = rows.iter().map(|&i| self.targets[i]).sum();
        s / (rows.len() as f64 + self.params.lambda)
    }

    fn best_split(&self, rows: &[usize], candidates: &[usize]) -> Option<SplitChoice> {
        let n = rows.len();
        let lambda = self.params.lambda;
        let total: f64 = rows.iter().map(|&i| self.targets[i]).sum();
        let parent = total * total / (n as f64 + lambda);
        let min_side = self.params.min_samples_leaf.max(1);
        let mut best: Option<SplitChoice> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &j in candidates {
            order.sort_by(|&a, &b| self.features.get(a, j).total_cmp(&self.features.get(b, j)));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.targets[order[pos]];
                let here = self.features.get(order[pos], j);
                let next = self.features.get(order[pos + 1], j);
                if here == next {
                    continue;
                }
                let nl = pos + 1;
                let nr = n - nl;
                if nl < min_side || nr < min_side {
                    continue;
                }
                if (nl as f64) < self.params.min_child_weight || (nr as f64) < self.params.min_child_weight {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / (nl as f64 + lambda) + right_sum * right_sum / (nr as f64 + lambda);
                let gain = 0.5 * (score - parent);
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice { feature: j, threshold: 0.5 * (here + next), gain });
                }
            }
        }
        best
    }

    fn candidates(&self, rng: &mut Rng) -> Vec<usize> {
        match self.params.max_features {
            MaxFeatures::All => self.allowed.to_vec(),
            MaxFeatures::Sqrt => {
                let p = self.allowed.len();
                let take = ((p as f64).sqrt().ceil() as usize).clamp(1, p);
                let mut pick: Vec<usize> = sample(rng, p, take).into_iter().map(|i| self.allowed[i]).collect();
                pick.sort_unstable();
                pick
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(&rows) });
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || rows.len() < self.params.min_samples_split.max(2) {
            return id;
        }
        let candidates = self.candidates(rng);
        let Some(split) = self.best_split(&rows, &candidates) else {
            return id;
        };
        if split.gain <= self.params.gamma || split.gain <= 0.0 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.features.get(i, split.feature) <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// Grows a tree on `rows`, splitting only on `allowed` feature indices.
pub fn build_tree(
    features: Features<'_>,
    targets: &[f64],
    rows: &[usize],
    allowed: &[usize],
    params: &TreeParams,
    rng: &mut Rng,
) -> RegressionTree {
    let mut b = Builder { features, targets, allowed, params, nodes: Vec::new() };
    b.grow(rows.to_vec(), 0, rng);
    RegressionTree { nodes: b.nodes }
}

/// The split the builder would choose at the root.
pub fn root_split(features: Features<'_>, targets: &[f64], params: &TreeParams) -> Option<SplitChoice> {
    let rows: Vec<usize> = (0..targets.len()).collect();
    let allowed: Vec<usize> = (0..features.width).collect();
    let b = Builder { features, targets, allowed: &allowed, params, nodes: Vec::new() };
    b.best_split(&rows, &allowed)
}

pub fn cart_params(hp: &HyperParams) -> Result<TreeParams, EstimatorError> {
    let mut p = Params::new(hp);
    let params = TreeParams {
        max_depth: p.opt_count("max_depth", None)?,
        min_samples_split: p.count("min_samples_split", 2, 2)?,
        min_samples_leaf: p.count("min_samples_leaf", 1, 1)?,
        max_features: match p.text("max_features", "all", &["all", "none", "sqrt"])?.as_str() {
            "sqrt" => MaxFeatures::Sqrt,
            _ => MaxFeatures::All,
        },
        ..TreeParams::default()
    };
    p.finish()?;
    Ok(params)
}

pub fn fit_cart(
    hp: &HyperParams,
    enc: &FeatureEncoding,
    train: &FitData<'_>,
    seed: &SeedTree,
) -> Result<RegressionTree, EstimatorError> {
    let params = cart_params(hp)?;
    let values = train.encoded(enc)?;
    let targets = train.targets();
    let rows: Vec<usize> = (0..train.len()).collect();
    let allowed: Vec<usize> = (0..enc.width()).collect();
    let features = Features { values: &values, width: enc.width() };
    Ok(build_tree(features, &targets, &rows, &allowed, &params, &mut seed.child("cart").rng()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ParamValue;
    use rand::Rng as _;

    fn sse(v: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum()
    }

    /// Every (feature, threshold) pair between distinct sorted values, scored
    /// by direct SSE reduction.
    fn exhaustive_root(x: &[Vec<f64>], y: &[f64]) -> (usize, f64, f64) {
        let total = sse(y);
        let mut best = (usize::MAX, f64::NAN, f64::NEG_INFINITY);
        for j in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[j]).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let left: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[j] <= thr).map(|(_, v)| *v).collect();
                let right: Vec<f64> = x.iter().zip(y).filter(|(r, _)| r[j] > thr).map(|(_, v)| *v).collect();
                let red = total - sse(&left) - sse(&right);
                if red > best.2 {
                    best = (j, thr, red);
                }
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_enumeration() {
        for seed in 0..20u64 {
            let mut rng = SeedTree::new(seed).rng();
            let n = rng.random_range(4..=32);
            let m = rng.random_range(1..=3);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + (r[m - 1] * 7.0).sin() + rng.random::<f64>()).collect();
            let flat: Vec<f64> = x.iter().flatten().copied().collect();
            let got = root_split(Features { values: &flat, width: m }, &y, &TreeParams::default()).unwrap();
            let (j, thr, red) = exhaustive_root(&x, &y);
            assert_eq!(got.feature, j, "seed {seed}");
            assert!((got.threshold - thr).abs() < 1e-12);
            assert!((2.0 * got.gain - red).abs() < 1e-9 * (1.0 + red));
        }
    }

    fn toy() -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v < 0.5 { 1.0 } else { 5.0 } + v).collect();
        (x, y)
    }

    #[test]
    fn depth_zero_is_mean() {
        let (x, y) = toy();
        let params = TreeParams { max_depth: Some(0), ..Default::default() };
        let rows: Vec<usize> = (0..40).collect();
        let t = build_tree(Features { values: &x, width: 1 }, &y, &rows, &[0], &params, &mut SeedTree::new(0).rng());
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert_eq!(t.node_count(), 1);
        for v in [0.0, 0.3, 0.9] {
            assert!((t.predict(&[v]) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn honors_depth_and_leaf_limits() {
        let (x, y) = toy();
        let rows: Vec<usize> = (0..40).collect();
        let f = Features { values: &x, width: 1 };
        let params = TreeParams { max_depth: Some(3), ..Default::default() };
        let t = build_tree(f, &y, &rows, &[0], &params, &mut SeedTree::new(0).rng());
        assert!(t.depth() <= 3);
        assert!((t.predict(&[0.1]) - t.predict(&[0.9])).abs() > 3.0);
        let params = TreeParams { min_samples_leaf: 15, ..Default::default() };
        let t = build_tree(f, &y, &rows, &[0], &params, &mut SeedTree::new(0).rng());
        // every leaf holds >= 15 of 40 rows, so at most two leaves
        assert!(t.node_count() <= 3);
        let params = TreeParams { min_samples_split: 41, ..Default::default() };
        let t = build_tree(f, &y, &rows, &[0], &params, &mut SeedTree::new(0).rng());
        assert_eq!(t.node_count(), 1);
    }

    #[test]
    fn full_tree_interpolates_training_data() {
        let (x, y) = toy();
        let rows: Vec<usize> = (0..40).collect();
        let t = build_tree(Features { values: &x, width: 1 }, &y, &rows, &[0], &TreeParams::default(), &mut SeedTree::new(0).rng());
        for (xi, yi) in x.iter().zip(&y) {
            assert!((t.predict(&[*xi]) - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn cart_hyperparams() {
        let mut hp = HyperParams::new();
        hp.insert("max_depth".into(), ParamValue::Null);
        hp.insert("max_features".into(), ParamValue::Text("sqrt".into()));
        let p = cart_params(&hp).unwrap();
        assert_eq!(p.max_depth, None);
        assert_eq!(p.max_features, MaxFeatures::Sqrt);
        hp.insert("min_samples_leaf".into(), ParamValue::Int(0));
        assert!(cart_params(&hp).is_err());
        let mut hp = HyperParams::new();
        hp.insert("criterion".into(), ParamValue::Text("gini".into()));
        assert!(cart_params(&hp).is_err());
    }
}
