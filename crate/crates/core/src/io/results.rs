//! Result files: results.csv, results.json, manifest.json, timings.csv.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::ScenarioId;
use crate::decomposition::{CellStatus, DecompositionReport};
use crate::estimators::HyperParams;
use crate::evaluation::{self, Aggregate};

pub const CSV_HEADER: [&str; 9] =
    ["dataset", "estimator", "scenario", "seed", "mise", "factual_mse", "fit_seconds", "status", "error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub scenario: ScenarioId,
    pub seed: u64,
    pub mise: Option<f64>,
    pub factual_mse: Option<f64>,
    pub fit_seconds: Option<f64>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub hyperparams: Option<HyperParams>,
}

/// One row per cell, in plan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub dataset: String,
    pub scenarios: Vec<ScenarioId>,
    pub estimators: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ResultRow>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ResultsTable {
    /// Wall times are only kept with `record_timings`, so that reruns
    /// produce identical tables.
    pub fn from_report(report: &DecompositionReport, record_timings: bool) -> Self {
        let rows = report
            .cells
            .iter()
            .map(|c| ResultRow {
                estimator: c.key.estimator.clone(),
                scenario: c.key.scenario,
                seed: c.key.seed,
                mise: finite(c.metrics.mise),
                factual_mse: finite(c.metrics.factual_mse),
                fit_seconds: if record_timings { finite(c.metrics.fit_seconds) } else { None },
                status: c.status,
                error: c.error.clone(),
                hyperparams: c.hyperparams.clone(),
            })
            .collect();
        Self {
            dataset: report.dataset.clone(),
            scenarios: report.scenarios.clone(),
            estimators: report.estimators.clone(),
            seeds: report.seeds.clone(),
            rows,
        }
    }

    pub fn aggregate(&self) -> BTreeMap<(String, ScenarioId), Aggregate> {
        evaluation::aggregate(self.rows.iter().map(|r| {
            let v = if r.status == CellStatus::Done { r.mise } else { None };
            (r.estimator.as_str(), r.scenario, v)
        }))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn write_results_csv(table: &ResultsTable, path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            table.dataset.clone(),
            r.estimator.clone(),
            r.scenario.name().to_string(),
            r.seed.to_string(),
            opt(r.mise),
            opt(r.factual_mse),
            opt(r.fit_seconds),
            match r.status {
                CellStatus::Done => "done".to_string(),
                CellStatus::Failed => "failed".to_string(),
            },
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
struct JsonCell {
    seed: u64,
    mise: Option<f64>,
    factual_mse: Option<f64>,
    fit_seconds: Option<f64>,
    status: CellStatus,
    error: Option<String>,
    hyperparams: Option<HyperParams>,
}

#[derive(Serialize, Deserialize)]
struct JsonAggregate {
    mean: Option<f64>,
    std: Option<f64>,
    done: usize,
    failed: usize,
}

#[derive(Serialize, Deserialize)]
struct ResultsJson {
    dataset: String,
    scenarios: Vec<ScenarioId>,
    estimators: Vec<String>,
    seeds: Vec<u64>,
    /// estimator -> scenario -> cells
    results: BTreeMap<String, BTreeMap<String, Vec<JsonCell>>>,
    aggregate: BTreeMap<String, BTreeMap<String, JsonAggregate>>,
}

pub fn results_json(table: &ResultsTable) -> Value {
    let mut results: BTreeMap<String, BTreeMap<String, Vec<JsonCell>>> = BTreeMap::new();
    for r in &table.rows {
        results.entry(r.estimator.clone()).or_default().entry(r.scenario.name().to_string()).or_default().push(
            JsonCell {
                seed: r.seed,
                mise: r.mise,
                factual_mse: r.factual_mse,
                fit_seconds: r.fit_seconds,
                status: r.status,
                error: r.error.clone(),
                hyperparams: r.hyperparams.clone(),
            },
        );
    }
    let mut aggregate: BTreeMap<String, BTreeMap<String, JsonAggregate>> = BTreeMap::new();
    for ((est, scenario), a) in table.aggregate() {
        aggregate.entry(est).or_default().insert(
            scenario.name().to_string(),
            JsonAggregate { mean: finite(a.mean), std: finite(a.std), done: a.done, failed: a.failed },
        );
    }
    serde_json::to_value(ResultsJson {
        dataset: table.dataset.clone(),
        scenarios: table.scenarios.clone(),
        estimators: table.estimators.clone(),
        seeds: table.seeds.clone(),
        results,
        aggregate,
    })
    .expect("serializable")
}

pub fn write_json(value: &impl Serialize, path: &Path) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Reads a results.json written by [`results_json`] back into a table.
pub fn read_results_json(path: &Path) -> Result<ResultsTable, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed: ResultsJson = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for est in &parsed.estimators {
        for scenario in &parsed.scenarios {
            let cells = parsed.results.get(est).and_then(|m| m.get(scenario.name()));
            for c in cells.into_iter().flatten() {
                rows.push(ResultRow {
                    estimator: est.clone(),
                    scenario: *scenario,
                    seed: c.seed,
                    mise: c.mise,
                    factual_mse: c.factual_mse,
                    fit_seconds: c.fit_seconds,
                    status: c.status,
                    error: c.error.clone(),
                    hyperparams: c.hyperparams.clone(),
                });
            }
        }
    }
    Ok(ResultsTable {
        dataset: parsed.dataset,
        scenarios: parsed.scenarios,
        estimators: parsed.estimators,
        seeds: parsed.seeds,
        rows,
    })
}

/// Config echo plus seeds and tool version.
pub fn manifest(config: &Value, seeds: &[u64]) -> Value {
    serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seeds": seeds,
        "config": config,
    })
}

pub fn write_timings_csv(report: &DecompositionReport, path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["estimator", "scenario", "seed", "fit_seconds"])?;
    for c in &report.cells {
        w.write_record([
            c.key.estimator.clone(),
            c.key.scenario.name().to_string(),
            c.key.seed.to_string(),
            opt(finite(c.metrics.fit_seconds)),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{CellKey, RunCell};
    use crate::evaluation::MetricBundle;

    fn report() -> DecompositionReport {
        let cell = |est: &str, scenario, seed, mise: Option<f64>| RunCell {
            key: CellKey { estimator: est.into(), scenario, seed },
            status: if mise.is_some() { CellStatus::Done } else { CellStatus::Failed },
            metrics: mise.map_or(MetricBundle::failed(), |m| MetricBundle { mise: m, factual_mse: 0.25, fit_seconds: 1.5 }),
            error: mise.is_none().then(|| "boom, \"quoted\"".to_string()),
            hyperparams: None,
            profile: None,
        };
        DecompositionReport {
            dataset: "toy".into(),
            scenarios: vec![ScenarioId::Randomized, ScenarioId::DConfounded],
            estimators: vec!["a".into(), "b".into()],
            seeds: vec![1],
            cells: vec![
                cell("a", ScenarioId::Randomized, 1, Some(0.1 + 0.2)),
                cell("a", ScenarioId::DConfounded, 1, Some(2.0)),
                cell("b", ScenarioId::Randomized, 1, None),
                cell("b", ScenarioId::DConfounded, 1, Some(1.0)),
            ],
            diagnostics: vec![],
        }
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        write_results_csv(&ResultsTable::from_report(&report(), false), &p).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(&rows[0][4], "0.30000000000000004");
        assert_eq!(&rows[0][6], "");
        assert_eq!(&rows[2][7], "failed");
        assert_eq!(&rows[2][4], "");
        assert_eq!(&rows[2][8], "boom, \"quoted\"");
        write_results_csv(&ResultsTable::from_report(&report(), true), &p).unwrap();
        let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&p).unwrap().records().map(Result::unwrap).collect();
        assert_eq!(&rows[0][6], "1.5");
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.json");
        let table = ResultsTable::from_report(&report(), false);
        write_json(&results_json(&table), &p).unwrap();
        assert_eq!(read_results_json(&p).unwrap(), table);
    }
}
