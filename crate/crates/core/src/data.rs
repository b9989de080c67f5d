//! Domain types shared by every stage of a benchmark run.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::SeedTree;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("covariate matrix must have at least one row and one column")]
    Empty,
    #[error("expected {expected} values for a {rows}x{cols} matrix, got {got}")]
    Shape { rows: usize, cols: usize, expected: usize, got: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateName(String),
    #[error("non-finite value at row {row}, column `{col}`")]
    NonFinite { row: usize, col: String },
    #[error("column `{col}` is flagged binary but row {row} holds {value}")]
    NotBinary { col: String, row: usize, value: f64 },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("intervention space needs at least one label")]
    NoInterventions,
    #[error("duplicate intervention label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario {0} needs more than one intervention option")]
    ScenarioNeedsInterventions(ScenarioId),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("degenerate split: n = {n} cannot give each partition at least one unit")]
    DegenerateSplit { n: usize },
}

/// n x m table of unit covariates, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    rows: usize,
    cols: usize,
    names: Vec<String>,
    values: Vec<f64>,
    binary_cols: BTreeSet<String>,
}

impl CovariateMatrix {
    pub fn new(
        names: Vec<String>,
        values: Vec<f64>,
        binary_cols: BTreeSet<String>,
    ) -> Result<Self, DataError> {
        let cols = names.len();
        if cols == 0 || values.is_empty() {
            return Err(DataError::Empty);
        }
        if values.len() % cols != 0 {
            return Err(DataError::Shape {
                rows: values.len() / cols,
                cols,
                expected: (values.len() / cols + 1) * cols,
                got: values.len(),
            });
        }
        let rows = values.len() / cols;
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for b in &binary_cols {
            if !seen.contains(b.as_str()) {
                return Err(DataError::UnknownColumn(b.clone()));
            }
        }
        let m = Self { rows, cols, names, values, binary_cols };
        for i in 0..rows {
            for (j, &v) in m.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row: i, col: m.names[j].clone() });
                }
            }
        }
        for b in &m.binary_cols {
            let j = m.column_index(b).expect("checked above");
            for i in 0..rows {
                let v = m.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::NotBinary { col: b.clone(), row: i, value: v });
                }
            }
        }
        Ok(m)
    }

    /// Same matrix with `extra` added to the binary columns (validated).
    pub fn with_binary(self, extra: &[String]) -> Result<Self, DataError> {
        let mut binary = self.binary_cols;
        binary.extend(extra.iter().cloned());
        Self::new(self.names, self.values, binary)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn binary_cols(&self) -> &BTreeSet<String> {
        &self.binary_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_binary(&self, name: &str) -> bool {
        self.binary_cols.contains(name)
    }
}

/// The discrete set of intervention options. Interventions are referred to by
/// their 0-based index everywhere outside of display code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpace {
    labels: Vec<String>,
}

impl InterventionSpace {
    pub fn new(labels: Vec<String>) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::NoInterventions);
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(DataError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Labels `w1..wk`.
    pub fn with_count(k: usize) -> Result<Self, DataError> {
        Self::new((1..=k).map(|i| format!("w{i}")).collect())
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// The dose interval, fixed to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseSpace;

impl DoseSpace {
    pub const LO: f64 = 0.0;
    pub const HI: f64 = 1.0;

    pub fn contains(d: f64) -> bool {
        (Self::LO..=Self::HI).contains(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "randomized")]
    Randomized,
    #[serde(rename = "t-nonuniform")]
    TNonUniform,
    #[serde(rename = "t-confounded")]
    TConfounded,
    #[serde(rename = "d-nonuniform")]
    DNonUniform,
    #[serde(rename = "d-confounded")]
    DConfounded,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::Randomized,
        ScenarioId::TNonUniform,
        ScenarioId::TConfounded,
        ScenarioId::DNonUniform,
        ScenarioId::DConfounded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Randomized => "randomized",
            ScenarioId::TNonUniform => "t-nonuniform",
            ScenarioId::TConfounded => "t-confounded",
            ScenarioId::DNonUniform => "d-nonuniform",
            ScenarioId::DConfounded => "d-confounded",
        }
    }

    /// Short column header used in rendered tables.
    pub fn header(self) -> &'static str {
        match self {
            ScenarioId::Randomized => "random.",
            ScenarioId::TNonUniform => "t non-unif.",
            ScenarioId::TConfounded => "t conf.",
            ScenarioId::DNonUniform => "d non-unif.",
            ScenarioId::DConfounded => "d conf.",
        }
    }

    /// Scenarios 2 and 3 vary only the intervention and are meaningless
    /// with a single intervention option.
    pub fn valid_for(self, k: usize) -> bool {
        k > 1 || !matches!(self, ScenarioId::TNonUniform | ScenarioId::TConfounded)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioId::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| DataError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let f = [self.train, self.val, self.test];
        let ok = f.iter().all(|v| v.is_finite() && *v > 0.0)
            && (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DataError::BadFractions(f))
        }
    }
}

/// Shuffles `0..n` and cuts it into train/val/test. Validation and test
/// sizes are `floor(fraction * n)`, raised to one unit when the floor is
/// zero; the remainder goes to train.
pub fn make_splits(
    n: usize,
    fractions: SplitFractions,
    seed: &SeedTree,
) -> Result<SplitIndices, DataError> {
    fractions.validate()?;
    let n_val = ((fractions.val * n as f64).floor() as usize).max(1);
    let n_test = ((fractions.test * n as f64).floor() as usize).max(1);
    if n < 3 || n_val + n_test >= n {
        return Err(DataError::DegenerateSplit { n });
    }
    Ok(cut(n, n_val, n_test, seed))
}

fn cut(n: usize, n_val: usize, n_test: usize, seed: &SeedTree) -> SplitIndices {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let test = perm[..n_test].to_vec();
    let val = perm[n_test..n_test + n_val].to_vec();
    let train = perm[n_test + n_val..].to_vec();
    SplitIndices { train, val, test }
}

/// One materialized observational dataset `(X, T, D, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub scenario: ScenarioId,
    pub x: Arc<CovariateMatrix>,
    pub space: InterventionSpace,
    pub t: Vec<usize>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    pub splits: Arc<SplitIndices>,
    pub seed_record: SeedTree,
}

impl ScenarioDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }
}

/// Lists every violated dataset invariant; an empty list means valid.
pub fn validate_dataset(ds: &ScenarioDataset) -> Vec<String> {
    let mut problems = Vec::new();
    let n = ds.x.rows();
    for (name, len) in [("T", ds.t.len()), ("D", ds.d.len()), ("Y", ds.y.len())] {
        if len != n {
            problems.push(format!("length: {name} has {len} entries, expected {n}"));
        }
    }
    if let Some(i) = ds.d.iter().position(|d| !DoseSpace::contains(*d)) {
        problems.push(format!("dose range: D[{i}] = {} lies outside [0, 1]", ds.d[i]));
    }
    let k = ds.space.k();
    if let Some(i) = ds.t.iter().position(|t| *t >= k) {
        problems.push(format!(
            "intervention label: T[{i}] = {} is not one of the {k} labels",
            ds.t[i]
        ));
    }
    if let Some(i) = ds.y.iter().position(|y| !y.is_finite()) {
        problems.push(format!("outcome: Y[{i}] is not finite"));
    }
    if !ds.scenario.valid_for(k) {
        problems.push(format!("scenario: {} invalid for k = {k}", ds.scenario));
    }
    let mut seen = vec![false; n];
    let mut overlap = false;
    let mut out_of_range = false;
    for &i in ds.splits.train.iter().chain(&ds.splits.val).chain(&ds.splits.test) {
        match seen.get_mut(i) {
            Some(s) if *s => overlap = true,
            Some(s) => *s = true,
            None => out_of_range = true,
        }
    }
    if overlap || out_of_range || seen.iter().any(|s| !s) {
        problems.push("splits: train/val/test do not partition the units".to_string());
    }
    problems
}
