//! CADR estimators behind a common fit/predict contract.
//!
//! Every family consumes the same training rows `(x, t, d, y)` and produces a
//! [`TrainedModel`] that predicts `mu_hat(t, d, x)`. Built-in families live in
//! the submodules; `external` drives a subprocess over newline-delimited JSON.

pub mod external;
pub mod gbt;
pub mod linear;
pub mod nn;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CovariateMatrix, InterventionSpace, ScenarioDataset};
use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("hyperparameter `{name}`: {msg}")]
    Hyperparam { name: String, msg: String },
    #[error("unknown hyperparameter `{0}`")]
    UnknownHyperparam(String),
    #[error("need at least {need} training rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("training targets contain non-finite values")]
    NonFiniteTarget,
    #[error("empty feature set")]
    EmptyFeatures,
    #[error("unknown intervention index {t} (k = {k})")]
    UnknownLabel { t: usize, k: usize },
    #[error("non-finite training loss {loss} at step {step} ({diagnostics})")]
    NonFiniteLoss { step: usize, loss: f64, diagnostics: String },
    #[error("external estimator: {0}")]
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "cart")]
    Cart,
    #[serde(rename = "gbt")]
    Gbt,
    #[serde(rename = "spline-additive")]
    SplineAdditive,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "drnet-lite")]
    DrnetLite,
    #[serde(rename = "vcnet-lite")]
    VcnetLite,
    #[serde(rename = "external")]
    External,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Ridge,
        Family::Cart,
        Family::Gbt,
        Family::SplineAdditive,
        Family::Mlp,
        Family::DrnetLite,
        Family::VcnetLite,
        Family::External,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ridge => "ridge",
            Family::Cart => "cart",
            Family::Gbt => "gbt",
            Family::SplineAdditive => "spline-additive",
            Family::Mlp => "mlp",
            Family::DrnetLite => "drnet-lite",
            Family::VcnetLite => "vcnet-lite",
            Family::External => "external",
        }
    }

    /// Shipped search space for the family.
    pub fn default_space(self) -> SearchSpace {
        use ParamValue::{Float as F, Int as I, Null, Text};
        let entries: Vec<(&str, Vec<ParamValue>)> = match self {
            Family::Ridge => vec![("lambda", vec![F(0.0), F(1e-3), F(1e-1)])],
            Family::Cart => vec![
                ("max_depth", vec![I(5), I(15), Null]),
                ("min_samples_split", vec![I(2), I(5), I(20)]),
                ("min_samples_leaf", vec![I(1), I(5), I(10)]),
                ("max_features", vec![Text("all".into()), Text("sqrt".into())]),
            ],
            Family::Gbt => vec![
                ("learning_rate", vec![F(0.01), F(0.1), F(0.2)]),
                ("max_depth", vec![I(3), I(5), I(7), I(9)]),
                ("subsample", vec![F(0.5), F(0.7), F(1.0)]),
                ("min_child_weight", vec![F(1.0), F(3.0), F(5.0)]),
                ("gamma", vec![F(0.0), F(0.1), F(0.2)]),
                ("colsample", vec![F(0.3), F(0.5), F(0.7)]),
            ],
            Family::SplineAdditive => vec![("n_knots", vec![I(4), I(8), I(12)])],
            Family::Mlp => vec![
                ("learning_rate", vec![F(1e-4), F(1e-3)]),
                ("l2", vec![F(0.0), F(0.1)]),
                ("batch_size", vec![I(64), I(128)]),
                ("hidden", vec![I(32), I(48)]),
                ("steps", vec![I(5000)]),
            ],
            Family::DrnetLite => vec![
                ("learning_rate", vec![F(1e-4), F(1e-3)]),
                ("l2", vec![F(0.0), F(0.1)]),
                ("batch_size", vec![I(64), I(128)]),
                ("hidden", vec![I(32), I(48)]),
                ("strata", vec![I(10)]),
                ("steps", vec![I(5000)]),
            ],
            Family::VcnetLite => vec![
                ("learning_rate", vec![F(1e-3), F(1e-2)]),
                ("batch_size", vec![I(128), I(256)]),
                ("hidden", vec![I(32)]),
                ("steps", vec![I(5000)]),
            ],
            Family::External => vec![],
        };
        SearchSpace::new(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
            .expect("shipped spaces are non-empty")
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown estimator family `{s}`"))
    }
}

/// A single hyperparameter value as it appears in configs and on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
    Null,
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(v) => f.write_str(v),
            ParamValue::Null => f.write_str("none"),
        }
    }
}

pub type HyperParams = BTreeMap<String, ParamValue>;

/// Per-hyperparameter candidate lists; the search space is their cartesian
/// product, enumerated with the last key varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    entries: BTreeMap<String, Vec<ParamValue>>,
}

impl SearchSpace {
    pub fn new(entries: BTreeMap<String, Vec<ParamValue>>) -> Result<Self, EstimatorError> {
        if let Some((name, _)) = entries.iter().find(|(_, v)| v.is_empty()) {
            return Err(EstimatorError::Hyperparam { name: name.clone(), msg: "empty candidate list".into() });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<ParamValue>> {
        &self.entries
    }

    /// Number of configurations (1 for an empty space).
    pub fn size(&self) -> usize {
        self.entries.values().map(Vec::len).product()
    }

    /// The `index`-th configuration in mixed-radix order.
    pub fn config(&self, mut index: usize) -> HyperParams {
        let mut out = HyperParams::new();
        for (name, values) in self.entries.iter().rev() {
            out.insert(name.clone(), values[index % values.len()].clone());
            index /= values.len();
        }
        out
    }

    /// Replaces (or adds) the candidate lists given in `overrides`.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Vec<ParamValue>>) -> Result<Self, EstimatorError> {
        let mut entries = self.entries.clone();
        for (k, v) in overrides {
            entries.insert(k.clone(), v.clone());
        }
        Self::new(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub name: String,
    pub family: Family,
    pub hyperparams: HyperParams,
    pub external: Option<ExternalCommand>,
}

impl EstimatorSpec {
    pub fn new(name: impl Into<String>, family: Family) -> Self {
        Self { name: name.into(), family, hyperparams: HyperParams::new(), external: None }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    pub fn with_params(&self, hyperparams: HyperParams) -> Self {
        Self { hyperparams, ..self.clone() }
    }
}

/// Typed access to a hyperparameter map; [`Params::finish`] rejects keys that
/// were never read.
pub(crate) struct Params<'a> {
    map: &'a HyperParams,
    used: Vec<&'a str>,
}

impl<'a> Params<'a> {
    pub fn new(map: &'a HyperParams) -> Self {
        Self { map, used: Vec::new() }
    }

    fn lookup(&mut self, key: &'a str) -> Option<&'a ParamValue> {
        self.used.push(key);
        self.map.get(key)
    }

    fn bad(key: &str, msg: impl Into<String>) -> EstimatorError {
        EstimatorError::Hyperparam { name: key.to_string(), msg: msg.into() }
    }

    pub fn float(&mut self, key: &'a str, default: f64) -> Result<f64, EstimatorError> {
        match self.lookup(key) {
            None => Ok(default),
            Some(ParamValue::Float(v)) if v.is_finite() => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(Self::bad(key, format!("expected a number, got {other}"))),
        }
    }

    pub fn float_in(&mut self, key: &'a str, default: f64, lo: f64, hi: f64) -> Result<f64, EstimatorError> {
        let v = self.float(key, default)?;
        if v < lo || v > hi {
            return Err(Self::bad(key, format!("{v} outside [{lo}, {hi}]")));
        }
        Ok(v)
    }

    pub fn count(&mut self, key: &'a str, default: usize, min: usize) -> Result<usize, EstimatorError> {
        let v = match self.lookup(key) {
            None => default,
            Some(ParamValue::Int(v)) if *v >= 0 => *v as usize,
            Some(ParamValue::Float(v)) if v.fract() == 0.0 && *v >= 0.0 => *v as usize,
            Some(other) => return Err(Self::bad(key, format!("expected a non-negative integer, got {other}"))),
        };
        if v < min {
            return Err(Self::bad(key, format!("must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    /// Integer or `null` (unbounded).
    pub fn opt_count(&mut self, key: &'a str, default: Option<usize>) -> Result<Option<usize>, EstimatorError> {
        match self.lookup(key) {
            None => Ok(default),
            Some(ParamValue::Null) => Ok(None),
            Some(ParamValue::Text(s)) if s == "none" => Ok(None),
            Some(ParamValue::Int(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(other) => Err(Self::bad(key, format!("expected an integer or null, got {other}"))),
        }
    }

    pub fn text(&mut self, key: &'a str, default: &str, allowed: &[&str]) -> Result<String, EstimatorError> {
        let v = match self.lookup(key) {
            None => default.to_string(),
            Some(ParamValue::Text(s)) => s.clone(),
            Some(ParamValue::Null) => "none".to_string(),
            Some(other) => return Err(Self::bad(key, format!("expected text, got {other}"))),
        };
        if !allowed.contains(&v.as_str()) {
            return Err(Self::bad(key, format!("`{v}` not one of {allowed:?}")));
        }
        Ok(v)
    }

    pub fn finish(self) -> Result<(), EstimatorError> {
        match self.map.keys().find(|k| !self.used.contains(&k.as_str())) {
            Some(k) => Err(EstimatorError::UnknownHyperparam(k.clone())),
            None => Ok(()),
        }
    }
}

/// How `(x, t, d)` becomes a numeric row: covariates as-is, a one-hot block
/// over the k interventions (omitted when k = 1), then the dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub m: usize,
    pub k: usize,
}

impl FeatureEncoding {
    pub fn new(m: usize, k: usize) -> Self {
        Self { m, k }
    }

    pub fn one_hot_width(&self) -> usize {
        if self.k > 1 { self.k } else { 0 }
    }

    pub fn width(&self) -> usize {
        self.m + self.one_hot_width() + 1
    }

    pub fn encode_into(&self, x: &[f64], t: usize, d: f64, out: &mut Vec<f64>) -> Result<(), EstimatorError> {
        if t >= self.k {
            return Err(EstimatorError::UnknownLabel { t, k: self.k });
        }
        out.extend_from_slice(x);
        if self.k > 1 {
            out.extend((0..self.k).map(|j| if j == t { 1.0 } else { 0.0 }));
        }
        out.push(d);
        Ok(())
    }

    pub fn encode(&self, x: &[f64], t: usize, d: f64) -> Result<Vec<f64>, EstimatorError> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(x, t, d, &mut out)?;
        Ok(out)
    }
}

/// Observed rows `(x, t, d, y)` selected by `rows` from full-length vectors.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub x: &'a CovariateMatrix,
    pub rows: &'a [usize],
    pub t: &'a [usize],
    pub d: &'a [f64],
    pub y: &'a [f64],
}

impl<'a> FitData<'a> {
    pub fn new(x: &'a CovariateMatrix, rows: &'a [usize], t: &'a [usize], d: &'a [f64], y: &'a [f64]) -> Self {
        Self { x, rows, t, d, y }
    }

    pub fn from_dataset(ds: &'a ScenarioDataset, rows: &'a [usize]) -> Self {
        Self { x: &ds.x, rows, t: &ds.t, d: &ds.d, y: &ds.y }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|&i| self.y[i]).collect()
    }

    /// Encoded design matrix, row-major.
    pub fn encoded(&self, enc: &FeatureEncoding) -> Result<Vec<f64>, EstimatorError> {
        let mut out = Vec::with_capacity(self.len() * enc.width());
        for &i in self.rows {
            enc.encode_into(self.x.row(i), self.t[i], self.d[i], &mut out)?;
        }
        Ok(out)
    }
}

/// One prediction request.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub x: &'a [f64],
    pub t: usize,
    pub d: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_train_loss: f64,
    /// Per-round training loss, where the family tracks one.
    pub loss_history: Vec<f64>,
}

#[derive(Debug)]
pub enum Fitted {
    Ridge(linear::RidgeModel),
    Tree(tree::RegressionTree),
    Gbt(gbt::GbtModel),
    Spline(linear::SplineAdditiveModel),
    Net(nn::NetModel),
    External(external::ExternalModel),
}

#[derive(Debug)]
pub struct TrainedModel {
    pub family: Family,
    pub encoding: FeatureEncoding,
    pub meta: TrainingMeta,
    pub fitted: Fitted,
}

impl TrainedModel {
    /// Predicts `mu_hat(t, d, x)`. External models answer NaN when the
    /// subprocess fails; use [`TrainedModel::predict_batch`] to see the error.
    pub fn predict(&self, x: &[f64], t: usize, d: f64) -> f64 {
        match &self.fitted {
            Fitted::External(_) => self.predict_batch(&[Query { x, t, d }]).map(|v| v[0]).unwrap_or(f64::NAN),
            _ => self.predict_internal(x, t, d),
        }
    }

    fn predict_internal(&self, x: &[f64], t: usize, d: f64) -> f64 {
        let enc = &self.encoding;
        match &self.fitted {
            Fitted::Ridge(m) => m.predict(&enc.encode(x, t, d).expect("label checked by caller")),
            Fitted::Tree(m) => m.predict(&enc.encode(x, t, d).expect("label checked by caller")),
            Fitted::Gbt(m) => m.predict(&enc.encode(x, t, d).expect("label checked by caller")),
            Fitted::Spline(m) => m.predict(&enc.encode(x, t, d).expect("label checked by caller")),
            Fitted::Net(m) => m.predict(x, t, d),
            Fitted::External(_) => unreachable!("external models predict in batches"),
        }
    }

    pub fn predict_batch(&self, queries: &[Query<'_>]) -> Result<Vec<f64>, EstimatorError> {
        if let Some(q) = queries.iter().find(|q| q.t >= self.encoding.k) {
            return Err(EstimatorError::UnknownLabel { t: q.t, k: self.encoding.k });
        }
        match &self.fitted {
            Fitted::External(m) => m.predict(queries),
            Fitted::Net(m) => Ok(m.predict_many(queries)),
            _ => Ok(queries.iter().map(|q| self.predict_internal(q.x, q.t, q.d)).collect()),
        }
    }
}

fn check_inputs(train: &FitData<'_>, space: &InterventionSpace) -> Result<(), EstimatorError> {
    if train.len() < 2 {
        return Err(EstimatorError::TooFewRows { need: 2, got: train.len() });
    }
    if train.x.cols() == 0 {
        return Err(EstimatorError::EmptyFeatures);
    }
    if train.rows.iter().any(|&i| !train.y[i].is_finite()) {
        return Err(EstimatorError::NonFiniteTarget);
    }
    if let Some(&i) = train.rows.iter().find(|&&i| train.t[i] >= space.k()) {
        return Err(EstimatorError::UnknownLabel { t: train.t[i], k: space.k() });
    }
    Ok(())
}

/// Fits one estimator configuration.
pub fn fit(
    spec: &EstimatorSpec,
    space: &InterventionSpace,
    train: &FitData<'_>,
    val: &FitData<'_>,
    seed: &SeedTree,
) -> Result<TrainedModel, EstimatorError> {
    check_inputs(train, space)?;
    let encoding = FeatureEncoding::new(train.x.cols(), space.k());
    let hp = &spec.hyperparams;
    let mut meta = TrainingMeta { seed: seed.seed(), ..Default::default() };
    let fitted = match spec.family {
        Family::Ridge => {
            let m = linear::fit_ridge(hp, &encoding, train)?;
            meta.steps = 1;
            Fitted::Ridge(m)
        }
        Family::Cart => {
            let m = tree::fit_cart(hp, &encoding, train, seed)?;
            meta.steps = m.node_count();
            Fitted::Tree(m)
        }
        Family::Gbt => {
            let m = gbt::fit_gbt(hp, &encoding, train, seed)?;
            meta.steps = m.rounds();
            meta.loss_history = m.train_loss.clone();
            Fitted::Gbt(m)
        }
        Family::SplineAdditive => {
            let m = linear::fit_spline_additive(hp, &encoding, train)?;
            meta.steps = 1;
            Fitted::Spline(m)
        }
        Family::Mlp | Family::DrnetLite | Family::VcnetLite => {
            let (m, history) = nn::fit_network(spec.family, hp, &encoding, train, val, seed)?;
            meta.steps = history.steps;
            meta.loss_history = history.val_loss;
            Fitted::Net(m)
        }
        Family::External => {
            let cmd = spec.external.as_ref().ok_or_else(|| {
                EstimatorError::External(format!("estimator `{}` has no command line", spec.name))
            })?;
            Fitted::External(external::ExternalModel::fit(cmd, hp, train, val, seed.seed())?)
        }
    };
    let mut model = TrainedModel { family: spec.family, encoding, meta, fitted };
    if !matches!(model.fitted, Fitted::External(_)) {
        let preds = model.predict_batch(
            &train.rows.iter().map(|&i| Query { x: train.x.row(i), t: train.t[i], d: train.d[i] }).collect::<Vec<_>>(),
        )?;
        model.meta.final_train_loss =
            train.rows.iter().zip(&preds).map(|(&i, p)| (train.y[i] - p).powi(2)).sum::<f64>() / train.len() as f64;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_layout() {
        let one = FeatureEncoding::new(3, 1);
        assert_eq!(one.encode(&[1.0, 2.0, 3.0], 0, 0.5).unwrap(), vec![1.0, 2.0, 3.0, 0.5]);
        assert_eq!(one.width(), 4);
        let three = FeatureEncoding::new(2, 3);
        let row = three.encode(&[1.0, 2.0], 1, 0.5).unwrap();
        assert_eq!(row, vec![1.0, 2.0, 0.0, 1.0, 0.0, 0.5]);
        assert_eq!(three.width(), 6);
        assert_eq!(*row.last().unwrap(), 0.5);
        assert!(matches!(three.encode(&[1.0, 2.0], 3, 0.5), Err(EstimatorError::UnknownLabel { t: 3, k: 3 })));
    }

    #[test]
    fn search_space_enumeration() {
        let s = Family::Cart.default_space();
        assert_eq!(s.size(), 54);
        let all: Vec<HyperParams> = (0..s.size()).map(|i| s.config(i)).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(Family::External.default_space().size(), 1);
        assert!(Family::External.default_space().config(0).is_empty());
        assert_eq!(Family::Gbt.default_space().size(), 3 * 4 * 3 * 3 * 3 * 3);
        assert_eq!(Family::SplineAdditive.default_space().size(), 3);
    }

    #[test]
    fn params_reject_unknown_keys() {
        let mut hp = HyperParams::new();
        hp.insert("lambda".into(), ParamValue::Float(0.1));
        hp.insert("foo".into(), ParamValue::Int(1));
        let mut p = Params::new(&hp);
        assert_eq!(p.float("lambda", 0.0).unwrap(), 0.1);
        assert!(matches!(p.finish(), Err(EstimatorError::UnknownHyperparam(k)) if k == "foo"));
    }

    #[test]
    fn param_values_deserialize_untagged() {
        let v: Vec<ParamValue> = serde_json::from_str(r#"[1, 0.5, "sqrt", null]"#).unwrap();
        assert_eq!(
            v,
            vec![ParamValue::Int(1), ParamValue::Float(0.5), ParamValue::Text("sqrt".into()), ParamValue::Null]
        );
    }
}
