//! Random hyperparameter search scored by validation MSE on factual outcomes.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::InterventionSpace;
use crate::estimators::{self, EstimatorSpec, FitData, HyperParams, Query, SearchSpace, TrainedModel};
use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("search budget must be >= 1")]
    Budget,
    #[error("all {} candidates failed: {}", .0.len(), summarize(.0))]
    AllFailed(Vec<Candidate>),
}

fn summarize(cands: &[Candidate]) -> String {
    cands
        .iter()
        .map(|c| format!("[#{}] {}", c.index, c.error.as_deref().unwrap_or("?")))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the draw order.
    pub draw: usize,
    /// Index of the configuration in the search space.
    pub index: usize,
    pub hyperparams: HyperParams,
    pub val_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HyperParams,
    pub best_draw: usize,
    pub candidates: Vec<Candidate>,
    pub budget_used: usize,
    pub seed: u64,
}

/// Validation MSE of a fitted model.
pub fn validation_mse(model: &TrainedModel, val: &FitData<'_>) -> Result<f64, String> {
    let queries: Vec<Query<'_>> =
        val.rows.iter().map(|&i| Query { x: val.x.row(i), t: val.t[i], d: val.d[i] }).collect();
    let preds = model.predict_batch(&queries).map_err(|e| e.to_string())?;
    let mse = val.rows.iter().zip(&preds).map(|(&i, p)| (val.y[i] - p).powi(2)).sum::<f64>() / val.len() as f64;
    if mse.is_finite() { Ok(mse) } else { Err(format!("non-finite validation MSE ({mse})")) }
}

/// Fits `min(budget, |space|)` distinct configurations drawn without
/// replacement and keeps the one with the lowest validation MSE (earliest
/// draw wins ties). Returns the search record and the winning model.
pub fn random_search(
    base: &EstimatorSpec,
    space: &SearchSpace,
    budget: usize,
    interventions: &InterventionSpace,
    train: &FitData<'_>,
    val: &FitData<'_>,
    seed: &SeedTree,
) -> Result<(SearchResult, TrainedModel), SelectionError> {
    if budget == 0 {
        return Err(SelectionError::Budget);
    }
    let size = space.size();
    let draws = budget.min(size);
    let order = sample(&mut seed.child("draws").rng(), size, draws).into_vec();
    let mut candidates = Vec::with_capacity(draws);
    let mut best: Option<(f64, usize, TrainedModel)> = None;
    for (draw, &index) in order.iter().enumerate() {
        let hyperparams = space.config(index);
        let spec = base.with_params(hyperparams.clone());
        let outcome = estimators::fit(&spec, interventions, train, val, &seed.child_idx("candidate", draw as u64))
            .map_err(|e| e.to_string())
            .and_then(|m| validation_mse(&m, val).map(|v| (v, m)));
        let mut cand = Candidate { draw, index, hyperparams, val_mse: None, error: None };
        match outcome {
            Ok((v, model)) => {
                cand.val_mse = Some(v);
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, draw, model));
                }
            }
            Err(e) => cand.error = Some(e),
        }
        candidates.push(cand);
    }
    match best {
        Some((_, best_draw, model)) => Ok((
            SearchResult {
                best: candidates[best_draw].hyperparams.clone(),
                best_draw,
                candidates,
                budget_used: draws,
                seed: seed.seed(),
            },
            model,
        )),
        None => Err(SelectionError::AllFailed(candidates)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateMatrix;
    use crate::estimators::{Family, ParamValue};
    use rand::Rng as _;
    use std::collections::{BTreeMap, BTreeSet};

    fn linear_data(n: usize) -> (CovariateMatrix, Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut rng = SeedTree::new(1).rng();
        let vals: Vec<f64> = (0..n * 2).map(|_| rng.random()).collect();
        let x = CovariateMatrix::new(vec!["a".into(), "b".into()], vals, BTreeSet::new()).unwrap();
        let d: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y = (0..n).map(|i| 3.0 * x.get(i, 0) - 2.0 * x.get(i, 1) + 5.0 * d[i] + 1.0).collect();
        (x, vec![0; n], d, y)
    }

    fn space(entries: &[(&str, Vec<ParamValue>)]) -> SearchSpace {
        SearchSpace::new(entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<BTreeMap<_, _>>()).unwrap()
    }

    #[test]
    fn lambda_dominance() {
        let (x, t, d, y) = linear_data(100);
        let tr: Vec<usize> = (0..80).collect();
        let va: Vec<usize> = (80..100).collect();
        let train = FitData::new(&x, &tr, &t, &d, &y);
        let val = FitData::new(&x, &va, &t, &d, &y);
        let s = space(&[("lambda", vec![ParamValue::Float(0.0), ParamValue::Float(1e6)])]);
        let base = EstimatorSpec::new("ridge", Family::Ridge);
        let k1 = InterventionSpace::with_count(1).unwrap();
        let (res, _) = random_search(&base, &s, 5, &k1, &train, &val, &SeedTree::new(2)).unwrap();
        assert_eq!(res.best["lambda"], ParamValue::Float(0.0));
        assert_eq!(res.budget_used, 2);
    }

    #[test]
    fn exhaustive_distinct_and_argmin() {
        let (x, t, d, y) = linear_data(120);
        let tr: Vec<usize> = (0..90).collect();
        let va: Vec<usize> = (90..120).collect();
        let train = FitData::new(&x, &tr, &t, &d, &y);
        let val = FitData::new(&x, &va, &t, &d, &y);
        let base = EstimatorSpec::new("cart", Family::Cart);
        let s = Family::Cart.default_space();
        let k1 = InterventionSpace::with_count(1).unwrap();
        for budget in [7, 54, 100] {
            let (res, _) = random_search(&base, &s, budget, &k1, &train, &val, &SeedTree::new(3)).unwrap();
            assert_eq!(res.candidates.len(), budget.min(54));
            let mut seen: Vec<usize> = res.candidates.iter().map(|c| c.index).collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), res.candidates.len());
            let best = res.candidates[res.best_draw].val_mse.unwrap();
            for c in &res.candidates {
                assert!(best <= c.val_mse.unwrap());
                if c.val_mse.unwrap() == best {
                    assert!(res.best_draw <= c.draw);
                }
            }
            let again = random_search(&base, &s, budget, &k1, &train, &val, &SeedTree::new(3)).unwrap().0;
            assert_eq!(res, again);
        }
    }

    #[test]
    fn single_config_and_total_failure() {
        let (x, t, d, y) = linear_data(40);
        let tr: Vec<usize> = (0..30).collect();
        let va: Vec<usize> = (30..40).collect();
        let train = FitData::new(&x, &tr, &t, &d, &y);
        let val = FitData::new(&x, &va, &t, &d, &y);
        let k1 = InterventionSpace::with_count(1).unwrap();
        let one = space(&[("lambda", vec![ParamValue::Float(0.1)])]);
        let base = EstimatorSpec::new("ridge", Family::Ridge);
        let (res, _) = random_search(&base, &one, 10, &k1, &train, &val, &SeedTree::new(1)).unwrap();
        assert_eq!(res.budget_used, 1);
        let bad = space(&[("lambda", vec![ParamValue::Float(-1.0), ParamValue::Text("x".into())])]);
        match random_search(&base, &bad, 10, &k1, &train, &val, &SeedTree::new(1)) {
            Err(SelectionError::AllFailed(c)) => {
                assert_eq!(c.len(), 2);
                assert!(c.iter().all(|c| c.error.as_deref().unwrap().contains("lambda")));
            }
            other => panic!("{other:?}"),
        }
    }
}
