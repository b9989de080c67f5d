//! Scenario decomposition: builds the five observational datasets of one
//! replication from shared base vectors, then schedules and runs every
//! (estimator, scenario, seed) cell.
//!
//! Treatment-first order:
//!
//! | scenario     | T      | D      |
//! |--------------|--------|--------|
//! | randomized   | T_rand | D_rand |
//! | t-nonuniform | T_nonu | D_rand |
//! | t-confounded | T_conf | D_rand |
//! | d-nonuniform | T_conf | D_nonu |
//! | d-confounded | T_conf | D_conf |
//!
//! Outcomes are always computed from the (T, D) pair a scenario trains on, and
//! every scenario of a replication shares the same noise draw and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_splits, DataError, ScenarioDataset, ScenarioId, SplitFractions, SplitIndices};
use crate::dgp::{self, generate_base_vectors, BaseVectors, DgpError, DgpSpec};
use crate::estimators::{EstimatorSpec, FitData, HyperParams, SearchSpace, TrainedModel};
use crate::evaluation::{
    self, confounding_diagnostic, dose_error_profile, dose_uniformity, intervention_uniformity, Aggregate,
    ConfoundingRecord, DoseErrorProfile, DoseGrid, MetricBundle, UniformityStat,
};
use crate::selection::{random_search, SelectionError};
use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("scenario {scenario} is not defined for k = {k}")]
    InvalidScenario { scenario: ScenarioId, k: usize },
    #[error("empty plan: {0}")]
    EmptyPlan(String),
    #[error("duplicate estimator name `{0}`")]
    DuplicateName(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionOrder {
    /// Intervention steps first, then dose steps.
    #[default]
    #[serde(rename = "treatment-first")]
    TreatmentFirst,
    /// Dose steps first (under random interventions), then intervention steps.
    #[serde(rename = "dose-first")]
    DoseFirst,
}

impl DecompositionOrder {
    /// Scenario sequence for `k` interventions.
    pub fn scenarios(self, k: usize) -> Vec<ScenarioId> {
        use ScenarioId::*;
        let all = match self {
            DecompositionOrder::TreatmentFirst => [Randomized, TNonUniform, TConfounded, DNonUniform, DConfounded],
            DecompositionOrder::DoseFirst => [Randomized, DNonUniform, DConfounded, TNonUniform, TConfounded],
        };
        all.into_iter().filter(|s| s.valid_for(k)).collect()
    }
}

/// A uniformly random permutation of `v`.
pub fn shuffle_vector<T: Clone>(v: &[T], seed: &SeedTree) -> Vec<T> {
    let mut out = v.to_vec();
    out.shuffle(&mut seed.rng());
    out
}

/// The (T, D) pair a scenario trains on.
pub fn scenario_vectors(
    scenario: ScenarioId,
    base: &BaseVectors,
    order: DecompositionOrder,
) -> (&[usize], &[f64]) {
    use ScenarioId::*;
    match order {
        DecompositionOrder::TreatmentFirst => match scenario {
            Randomized => (&base.t_rand, &base.d_rand),
            TNonUniform => (&base.t_nonu, &base.d_rand),
            TConfounded => (&base.t_conf, &base.d_rand),
            DNonUniform => (&base.t_conf, &base.d_nonu),
            DConfounded => (&base.t_conf, &base.d_conf),
        },
        DecompositionOrder::DoseFirst => match scenario {
            Randomized => (&base.t_rand, &base.d_rand),
            DNonUniform => (&base.t_rand, &base.d_nonu),
            DConfounded => (&base.t_rand, base.d_conf_trand.as_deref().unwrap_or(&base.d_conf)),
            TNonUniform => (&base.t_nonu, &base.d_conf),
            TConfounded => (&base.t_conf, &base.d_conf),
        },
    }
}

/// Builds one scenario dataset. `seed` is the replication seed; the noise
/// stream is derived from it, so all scenarios share the same noise draw.
pub fn materialize_scenario(
    scenario: ScenarioId,
    base: &BaseVectors,
    dgp: &DgpSpec,
    splits: Arc<SplitIndices>,
    seed: &SeedTree,
    order: DecompositionOrder,
) -> Result<ScenarioDataset, DecompositionError> {
    let k = dgp.space.k();
    if !scenario.valid_for(k) {
        return Err(DecompositionError::InvalidScenario { scenario, k });
    }
    let (t, d) = scenario_vectors(scenario, base, order);
    let x = &dgp.covariates;
    let mu: Vec<f64> = (0..x.rows()).map(|i| dgp.response.evaluate(t[i], d[i], x.row(i))).collect();
    let y = dgp::add_noise(&mu, dgp.noise_sigma, &seed.child("noise"))?;
    Ok(ScenarioDataset {
        scenario,
        x: Arc::clone(x),
        space: dgp.space.clone(),
        t: t.to_vec(),
        d: d.to_vec(),
        y,
        splits,
        seed_record: seed.child(scenario.name()),
    })
}

/// All scenario datasets of one replication.
pub fn materialize_replication(
    dgp: &DgpSpec,
    scenarios: &[ScenarioId],
    fractions: SplitFractions,
    root: u64,
    order: DecompositionOrder,
) -> Result<Vec<ScenarioDataset>, DecompositionError> {
    let seed = SeedTree::new(root);
    let splits = Arc::new(make_splits(dgp.n(), fractions, &seed.child("splits"))?);
    let base = generate_base_vectors(dgp, &seed.child("dgp"), order)?;
    scenarios
        .iter()
        .map(|&s| materialize_scenario(s, &base, dgp, Arc::clone(&splits), &seed, order))
        .collect()
}

/// One estimator entry of a plan: the base spec plus its search space.
#[derive(Debug, Clone)]
pub struct EstimatorPlan {
    pub spec: EstimatorSpec,
    pub space: SearchSpace,
    pub budget: usize,
}

impl EstimatorPlan {
    /// Plan entry with the family's shipped space and a budget of 10.
    pub fn with_defaults(spec: EstimatorSpec) -> Self {
        let space = spec.family.default_space();
        Self { spec, space, budget: 10 }
    }

    /// Plan entry that always fits exactly `hp`.
    pub fn fixed(spec: EstimatorSpec, hp: &HyperParams) -> Self {
        let entries = hp.iter().map(|(k, v)| (k.clone(), vec![v.clone()])).collect();
        Self { spec, space: SearchSpace::new(entries).expect("singleton lists"), budget: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionPlan {
    pub dgp: DgpSpec,
    pub scenarios: Vec<ScenarioId>,
    pub estimators: Vec<EstimatorPlan>,
    pub seeds: Vec<u64>,
    pub fractions: SplitFractions,
    pub order: DecompositionOrder,
    /// Search hyperparameters separately on every scenario; otherwise search
    /// once on the first scenario and reuse the winner.
    pub tune_per_scenario: bool,
    pub grid: DoseGrid,
    pub bins: usize,
    pub profiles: bool,
}

/// Identifies one cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub estimator: String,
    pub scenario: ScenarioId,
    pub seed: u64,
}

pub fn build_plan(
    dgp: DgpSpec,
    estimators: Vec<EstimatorPlan>,
    seeds: Vec<u64>,
    fractions: SplitFractions,
) -> Result<DecompositionPlan, DecompositionError> {
    dgp.validate()?;
    fractions.validate()?;
    if estimators.is_empty() {
        return Err(DecompositionError::EmptyPlan("no estimators".into()));
    }
    if seeds.is_empty() {
        return Err(DecompositionError::EmptyPlan("no seeds".into()));
    }
    let mut names = BTreeSet::new();
    for e in &estimators {
        if !names.insert(e.spec.name.clone()) {
            return Err(DecompositionError::DuplicateName(e.spec.name.clone()));
        }
    }
    let order = DecompositionOrder::default();
    Ok(DecompositionPlan {
        scenarios: order.scenarios(dgp.space.k()),
        dgp,
        estimators,
        seeds,
        fractions,
        order,
        tune_per_scenario: true,
        grid: DoseGrid::default(),
        bins: 10,
        profiles: false,
    })
}

impl DecompositionPlan {
    /// Switches decomposition order, resetting the scenario list.
    pub fn with_order(mut self, order: DecompositionOrder) -> Self {
        self.order = order;
        self.scenarios = order.scenarios(self.dgp.space.k());
        self
    }

    /// Restricts the scenarios (kept in decomposition order).
    pub fn with_scenarios(mut self, chosen: &[ScenarioId]) -> Result<Self, DecompositionError> {
        let k = self.dgp.space.k();
        if let Some(&s) = chosen.iter().find(|s| !s.valid_for(k)) {
            return Err(DecompositionError::InvalidScenario { scenario: s, k });
        }
        if chosen.is_empty() {
            return Err(DecompositionError::EmptyPlan("no scenarios".into()));
        }
        self.scenarios = self.order.scenarios(k).into_iter().filter(|s| chosen.contains(s)).collect();
        Ok(self)
    }

    /// Cells in estimator, scenario, seed order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for e in &self.estimators {
            for &scenario in &self.scenarios {
                for &seed in &self.seeds {
                    out.push(CellKey { estimator: e.spec.name.clone(), scenario, seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCell {
    pub key: CellKey,
    pub status: CellStatus,
    pub metrics: MetricBundle,
    pub error: Option<String>,
    pub hyperparams: Option<HyperParams>,
    pub profile: Option<DoseErrorProfile>,
}

/// Distribution diagnostics of one materialized scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDiagnostics {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub dose_uniformity: UniformityStat,
    pub intervention_uniformity: UniformityStat,
    pub confounding: ConfoundingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub dataset: String,
    pub scenarios: Vec<ScenarioId>,
    pub estimators: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<RunCell>,
    pub diagnostics: Vec<ScenarioDiagnostics>,
}

impl DecompositionReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    pub fn aggregate(&self) -> BTreeMap<(String, ScenarioId), Aggregate> {
        evaluation::aggregate(self.cells.iter().map(|c| {
            let v = (c.status == CellStatus::Done).then_some(c.metrics.mise);
            (c.key.estimator.as_str(), c.key.scenario, v)
        }))
    }

    pub fn cell(&self, estimator: &str, scenario: ScenarioId, seed: u64) -> Option<&RunCell> {
        self.cells.iter().find(|c| c.key.estimator == estimator && c.key.scenario == scenario && c.key.seed == seed)
    }
}

fn run_cell(
    plan: &DecompositionPlan,
    est: &EstimatorPlan,
    ds: &ScenarioDataset,
    seed: u64,
    frozen: Option<&HyperParams>,
) -> RunCell {
    let key = CellKey { estimator: est.spec.name.clone(), scenario: ds.scenario, seed };
    let fail = |error: String| RunCell {
        key: key.clone(),
        status: CellStatus::Failed,
        metrics: MetricBundle::failed(),
        error: Some(error),
        hyperparams: None,
        profile: None,
    };
    let train = FitData::from_dataset(ds, &ds.splits.train);
    let val = FitData::from_dataset(ds, &ds.splits.val);
    let search_seed = SeedTree::new(seed).child("fit").child(&est.spec.name).child(ds.scenario.name());
    let started = Instant::now();
    let (space, budget) = match frozen {
        Some(hp) => {
            let fixed = EstimatorPlan::fixed(est.spec.clone(), hp);
            (fixed.space, 1)
        }
        None => (est.space.clone(), est.budget),
    };
    let (result, model): (_, TrainedModel) =
        match random_search(&est.spec, &space, budget, &ds.space, &train, &val, &search_seed) {
            Ok(r) => r,
            Err(e @ SelectionError::AllFailed(_)) | Err(e @ SelectionError::Budget) => return fail(e.to_string()),
        };
    let fit_seconds = started.elapsed().as_secs_f64();
    let test = &ds.splits.test;
    let metrics = evaluation::mise(&model, plan.dgp.response.as_ref(), &ds.x, test, ds.space.k(), &plan.grid)
        .and_then(|mise| evaluation::factual_mse(&model, ds, test).map(|f| (mise, f)));
    let (mise, factual_mse) = match metrics {
        Ok(v) => v,
        Err(e) => return fail(e.to_string()),
    };
    let profile = if plan.profiles {
        dose_error_profile(&model, plan.dgp.response.as_ref(), ds, &plan.grid, plan.bins).ok()
    } else {
        None
    };
    RunCell {
        key,
        status: CellStatus::Done,
        metrics: MetricBundle { mise, factual_mse, fit_seconds },
        error: None,
        hyperparams: Some(result.best),
        profile,
    }
}

fn diagnostics(ds: &ScenarioDataset, seed: u64) -> ScenarioDiagnostics {
    ScenarioDiagnostics {
        scenario: ds.scenario,
        seed,
        dose_uniformity: dose_uniformity(&ds.d),
        intervention_uniformity: intervention_uniformity(&ds.t, ds.space.k()),
        confounding: confounding_diagnostic(ds),
    }
}

/// Runs every cell on `workers` threads. Cell failures are recorded, never
/// propagated; results do not depend on the worker count.
pub fn execute_plan(plan: &DecompositionPlan, workers: usize) -> Result<DecompositionReport, DecompositionError> {
    if plan.estimators.is_empty() || plan.seeds.is_empty() || plan.scenarios.is_empty() {
        return Err(DecompositionError::EmptyPlan("nothing to run".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DecompositionError::Pool(e.to_string()))?;
    pool.install(|| {
        let replications: Vec<Vec<ScenarioDataset>> = plan
            .seeds
            .par_iter()
            .map(|&s| materialize_replication(&plan.dgp, &plan.scenarios, plan.fractions, s, plan.order))
            .collect::<Result<_, _>>()?;
        let jobs: Vec<(usize, usize)> =
            (0..plan.estimators.len()).flat_map(|e| (0..plan.seeds.len()).map(move |s| (e, s))).collect();
        let results: Vec<Vec<RunCell>> = jobs
            .par_iter()
            .map(|&(e, s)| {
                let est = &plan.estimators[e];
                let seed = plan.seeds[s];
                let mut frozen: Option<HyperParams> = None;
                let mut cells = Vec::with_capacity(plan.scenarios.len());
                for ds in &replications[s] {
                    let cell = run_cell(plan, est, ds, seed, frozen.as_ref());
                    if !plan.tune_per_scenario && frozen.is_none() {
                        frozen = cell.hyperparams.clone();
                    }
                    cells.push(cell);
                }
                cells
            })
            .collect();
        let mut cells: Vec<RunCell> = results.into_iter().flatten().collect();
        let rank = |k: &CellKey| {
            let e = plan.estimators.iter().position(|p| p.spec.name == k.estimator);
            let sc = plan.scenarios.iter().position(|s| *s == k.scenario);
            let sd = plan.seeds.iter().position(|s| *s == k.seed);
            (e, sc, sd)
        };
        cells.sort_by_key(|c| rank(&c.key));
        let diagnostics = replications
            .iter()
            .zip(&plan.seeds)
            .flat_map(|(reps, &seed)| reps.iter().map(move |ds| diagnostics(ds, seed)))
            .collect();
        Ok(DecompositionReport {
            dataset: plan.dgp.name.clone(),
            scenarios: plan.scenarios.clone(),
            estimators: plan.estimators.iter().map(|e| e.spec.name.clone()).collect(),
            seeds: plan.seeds.clone(),
            cells,
            diagnostics,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateMatrix, InterventionSpace};
    use crate::dgp::{DoseAssignment, FnSurface, InterventionAssignment};
    use crate::estimators::{Family, ParamValue};
    use crate::stats;
    use rand::Rng as _;

    fn dgp(n: usize, k: usize) -> DgpSpec {
        let mut rng = SeedTree::new(9).rng();
        let vals = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let x = CovariateMatrix::new(vec!["a".into(), "b".into(), "c".into()], vals, Default::default()).unwrap();
        DgpSpec {
            name: "toy".into(),
            covariates: Arc::new(x),
            space: InterventionSpace::with_count(k).unwrap(),
            t_assign: InterventionAssignment { kappa: 2.0 },
            d_assign: DoseAssignment { alpha: 3.0 },
            response: Arc::new(FnSurface(|t: usize, d: f64, x: &[f64]| {
                (t as f64 + 1.0) * (x[0] + x[1]) * (1.0 - (d - x[0]).powi(2))
            })),
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn shuffle_preserves_multiset_and_input() {
        let v = vec![3.0, 1.0, 2.0, 2.0, 5.0];
        let s = shuffle_vector(&v, &SeedTree::new(1));
        let (mut a, mut b) = (v.clone(), s);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(v, vec![3.0, 1.0, 2.0, 2.0, 5.0]);
        assert_eq!(shuffle_vector(&[7], &SeedTree::new(2)), vec![7]);
    }

    #[test]
    fn scenario_selection_and_consistency() {
        let spec = dgp(300, 3);
        let all = ScenarioId::ALL.to_vec();
        let reps = materialize_replication(&spec, &all, SplitFractions::default(), 4, DecompositionOrder::TreatmentFirst)
            .unwrap();
        for ds in &reps {
            assert!(crate::data::validate_dataset(ds).is_empty());
            assert_eq!(ds.splits, reps[0].splits);
            for i in 0..ds.n() {
                assert_eq!(ds.y[i], spec.response.evaluate(ds.t[i], ds.d[i], ds.x.row(i)));
            }
        }
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(&reps[3].d), sorted(&reps[4].d));
        assert_eq!(reps[2].t, reps[3].t);
        assert_eq!(reps[1].d, reps[0].d);
    }

    #[test]
    fn single_intervention_rejects_t_scenarios() {
        let spec = dgp(50, 1);
        let seed = SeedTree::new(1);
        let base = generate_base_vectors(&spec, &seed, DecompositionOrder::TreatmentFirst).unwrap();
        let splits = Arc::new(make_splits(50, SplitFractions::default(), &seed).unwrap());
        let r = materialize_scenario(ScenarioId::TNonUniform, &base, &spec, splits, &seed, DecompositionOrder::TreatmentFirst);
        assert!(matches!(r, Err(DecompositionError::InvalidScenario { .. })));
        assert_eq!(DecompositionOrder::TreatmentFirst.scenarios(1).len(), 3);
        assert_eq!(DecompositionOrder::DoseFirst.scenarios(1).len(), 3);
    }

    #[test]
    fn dose_first_order() {
        let spec = dgp(400, 3);
        let reps = materialize_replication(
            &spec,
            &DecompositionOrder::DoseFirst.scenarios(3),
            SplitFractions::default(),
            2,
            DecompositionOrder::DoseFirst,
        )
        .unwrap();
        let ids: Vec<ScenarioId> = reps.iter().map(|r| r.scenario).collect();
        assert_eq!(ids, DecompositionOrder::DoseFirst.scenarios(3));
        assert_eq!(reps[0].t, reps[1].t);
        assert_eq!(reps[1].t, reps[2].t);
        assert_eq!(reps[3].d, reps[4].d);
    }

    #[test]
    fn plan_sizes_and_duplicates() {
        let ests: Vec<EstimatorPlan> = (0..8)
            .map(|i| EstimatorPlan::with_defaults(EstimatorSpec::new(format!("e{i}"), Family::Ridge)))
            .collect();
        let p = build_plan(dgp(30, 3), ests.clone(), vec![1, 2, 3, 4, 5], SplitFractions::default()).unwrap();
        assert_eq!(p.cells().len(), 200);
        let p = build_plan(dgp(30, 1), ests.clone(), vec![1, 2, 3, 4, 5], SplitFractions::default()).unwrap();
        assert_eq!(p.cells().len(), 120);
        let mut dup = ests.clone();
        dup.push(ests[0].clone());
        assert!(matches!(
            build_plan(dgp(30, 3), dup, vec![1], SplitFractions::default()),
            Err(DecompositionError::DuplicateName(_))
        ));
        assert!(build_plan(dgp(30, 3), vec![], vec![1], SplitFractions::default()).is_err());
        assert!(build_plan(dgp(30, 3), ests, vec![], SplitFractions::default()).is_err());
    }

    #[test]
    fn failures_are_isolated_and_workers_do_not_matter() {
        let good = EstimatorPlan::with_defaults(EstimatorSpec::new("ridge", Family::Ridge));
        let bad = EstimatorPlan::fixed(
            EstimatorSpec::new("broken", Family::Ridge),
            &[("lambda".to_string(), ParamValue::Float(-1.0))].into_iter().collect(),
        );
        let tree = EstimatorPlan {
            spec: EstimatorSpec::new("cart", Family::Cart),
            space: Family::Cart.default_space(),
            budget: 3,
        };
        let mut plan = build_plan(dgp(200, 2), vec![good, bad, tree], vec![3, 4], SplitFractions::default()).unwrap();
        plan.profiles = true;
        let a = execute_plan(&plan, 1).unwrap();
        let b = execute_plan(&plan, 4).unwrap();
        assert_eq!(a.cells.len(), 3 * 5 * 2);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.key, y.key);
            assert_eq!(x.metrics.mise.to_bits(), y.metrics.mise.to_bits());
            assert_eq!(x.hyperparams, y.hyperparams);
        }
        for c in &a.cells {
            if c.key.estimator == "broken" {
                assert_eq!(c.status, CellStatus::Failed);
                assert!(c.metrics.mise.is_nan());
                assert!(c.error.as_deref().unwrap().contains("lambda"));
            } else {
                assert_eq!(c.status, CellStatus::Done, "{:?}", c.error);
                assert!(c.profile.is_some());
            }
        }
        assert_eq!(a.failed(), 10);
    }

    #[test]
    fn frozen_tuning_reuses_first_scenario_choice() {
        let tree = EstimatorPlan {
            spec: EstimatorSpec::new("cart", Family::Cart),
            space: Family::Cart.default_space(),
            budget: 4,
        };
        let mut plan = build_plan(dgp(200, 2), vec![tree], vec![5], SplitFractions::default()).unwrap();
        plan.tune_per_scenario = false;
        let r = execute_plan(&plan, 1).unwrap();
        let first = r.cells[0].hyperparams.clone().unwrap();
        assert!(r.cells.iter().all(|c| c.hyperparams.as_ref() == Some(&first)));
    }

    #[test]
    fn shuffled_vectors_decouple_from_covariates() {
        let n = 10_000;
        let spec = dgp(n, 3);
        let base = generate_base_vectors(&spec, &SeedTree::new(8), DecompositionOrder::TreatmentFirst).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        let x = &spec.covariates;
        let conf = (0..3).map(|j| stats::pearson(&x.column(j), &base.d_conf).abs()).fold(0.0, f64::max);
        assert!(conf > bound, "confounded doses should correlate: {conf}");
        for j in 0..3 {
            assert!(stats::pearson(&x.column(j), &base.d_nonu).abs() < bound);
        }
    }
}
