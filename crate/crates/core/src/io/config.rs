//! Experiment configuration (JSON).
//!
//! ```json
//! {
//!   "dgp": { "kind": "tcga2-style", "n": 2000, "m": 20, "k": 3, "alpha": 2, "kappa": 2 },
//!   "decomposition": { "seeds": [0, 1, 2, 3, 4] },
//!   "estimators": [ { "family": "cart" }, { "family": "mlp", "budget": 4 } ],
//!   "output": { "dir": "results" }
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{InterventionSpace, ScenarioId, SplitFractions};
use crate::decomposition::{build_plan, DecompositionOrder, DecompositionPlan, EstimatorPlan};
use crate::dgp::{
    synthetic_covariates, CovariateKind, DgpSpec, DoseAssignment, Ihdp3Surface, InterventionAssignment,
    ResponseSurface, Synth1Surface, Tcga2Surface,
};
use crate::estimators::{EstimatorSpec, ExternalCommand, Family, HyperParams, ParamValue};
use crate::evaluation::DoseGrid;
use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
}

fn field(name: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpKind {
    #[serde(rename = "ihdp3")]
    Ihdp3,
    #[serde(rename = "tcga2-style")]
    Tcga2Style,
    #[serde(rename = "synth1-style")]
    Synth1Style,
    #[serde(rename = "custom-from-files")]
    CustomFromFiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    #[serde(rename = "ihdp3")]
    Ihdp3,
    #[serde(rename = "tcga2-style")]
    Tcga2Style,
    #[serde(rename = "synth1-style")]
    Synth1Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateFile {
    pub path: PathBuf,
    /// Optional file listing binary column names, one per line.
    #[serde(default)]
    pub binary_sidecar: Option<PathBuf>,
    /// Extra binary column names.
    #[serde(default)]
    pub binary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub kind: DgpKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub covariates: Option<CovariateFile>,
    /// Response surface for `custom-from-files` (default `tcga2-style`).
    #[serde(default)]
    pub surface: Option<SurfaceKind>,
    #[serde(default)]
    pub covariate_seed: u64,
    #[serde(default)]
    pub surface_seed: u64,
}

fn default_sigma() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Auto {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSelection {
    Auto(Auto),
    List(Vec<ScenarioId>),
}

impl Default for ScenarioSelection {
    fn default() -> Self {
        ScenarioSelection::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    #[serde(default)]
    pub scenarios: ScenarioSelection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub order: DecompositionOrder,
    #[serde(default = "default_true")]
    pub tune_per_scenario: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_true() -> bool {
    true
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioSelection::default(),
            seeds: default_seeds(),
            fractions: default_fractions(),
            order: DecompositionOrder::default(),
            tune_per_scenario: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub family: Family,
    #[serde(default)]
    pub name: Option<String>,
    /// Random-search budget (default 10; 1 for external estimators).
    #[serde(default)]
    pub budget: Option<usize>,
    /// Replaces candidate lists of the family's default space.
    #[serde(default)]
    pub space: BTreeMap<String, Vec<ParamValue>>,
    /// Fixed hyperparameters; disables the search.
    #[serde(default)]
    pub hyperparams: Option<HyperParams>,
    /// Program and arguments of an external estimator.
    #[serde(default)]
    pub command: Option<Vec<String>>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}

impl EstimatorConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.family.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Compute per-dose error profiles (needed for profile plots).
    #[serde(default = "default_true")]
    pub profiles: bool,
    /// Units sampled for the dose-response curve export.
    #[serde(default = "default_curve_units")]
    pub curve_units: usize,
}

fn default_grid() -> usize {
    DoseGrid::DEFAULT_POINTS
}

fn default_bins() -> usize {
    10
}

fn default_curve_units() -> usize {
    5
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { grid: default_grid(), bins: default_bins(), profiles: true, curve_units: default_curve_units() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Markdown,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    /// Fill the fit_seconds column of results.csv. Off by default because
    /// wall times differ between runs; they always go to timings.csv.
    #[serde(default)]
    pub record_timings: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Markdown, OutputFormat::Svg]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats(), record_timings: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        ConfigError::Parse { source, .. } => ConfigError::Parse { path: path.to_path_buf(), source },
        other => other,
    })?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

/// Parses config text without touching the filesystem or validating.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: PathBuf::from("<config>"), source })
}

impl DgpConfig {
    fn defaults(&self) -> (usize, usize, usize, f64, f64) {
        match self.kind {
            DgpKind::Ihdp3 => (747, 25, 1, 4.0, 0.0),
            DgpKind::Tcga2Style => (2000, 20, 3, 2.0, 2.0),
            DgpKind::Synth1Style => (700, 6, 1, 2.0, 0.0),
            DgpKind::CustomFromFiles => (0, 0, 3, 2.0, 2.0),
        }
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(self.defaults().0)
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or(self.defaults().1)
    }

    pub fn k(&self) -> usize {
        match self.kind {
            DgpKind::Ihdp3 | DgpKind::Synth1Style => 1,
            _ => self.k.unwrap_or(self.defaults().2),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.defaults().3)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(self.defaults().4)
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            match self.kind {
                DgpKind::Ihdp3 => "ihdp3",
                DgpKind::Tcga2Style => "tcga2-style",
                DgpKind::Synth1Style => "synth1-style",
                DgpKind::CustomFromFiles => "custom",
            }
            .to_string()
        })
    }
}

impl ExperimentConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dgp;
        let alpha = d.alpha();
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(field("dgp.alpha", format!("α ≥ 1 required, got {alpha}")));
        }
        let kappa = d.kappa();
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(field("dgp.kappa", format!("κ ≥ 0 required, got {kappa}")));
        }
        if !(d.sigma >= 0.0) || !d.sigma.is_finite() {
            return Err(field("dgp.sigma", format!("must be >= 0, got {}", d.sigma)));
        }
        if matches!(d.kind, DgpKind::Ihdp3 | DgpKind::Synth1Style) && d.k.is_some_and(|k| k != 1) {
            return Err(field("dgp.k", "this DGP has a single intervention"));
        }
        if d.k() == 0 {
            return Err(field("dgp.k", "must be >= 1"));
        }
        match (&d.kind, &d.covariates) {
            (DgpKind::CustomFromFiles, None) => {
                return Err(field("dgp.covariates", "required for custom-from-files"));
            }
            (_, Some(c)) => {
                for p in std::iter::once(&c.path).chain(c.binary_sidecar.as_ref()) {
                    if !self.resolve(p).is_file() {
                        return Err(field("dgp.covariates", format!("file {} does not exist", p.display())));
                    }
                }
            }
            (_, None) => {
                if d.n() < 3 {
                    return Err(field("dgp.n", format!("must be >= 3, got {}", d.n())));
                }
                let min_m = match d.kind {
                    DgpKind::Ihdp3 => 7,
                    DgpKind::Synth1Style => 6,
                    _ => 1,
                };
                if d.m() < min_m {
                    return Err(field("dgp.m", format!("must be >= {min_m}, got {}", d.m())));
                }
            }
        }
        let dec = &self.decomposition;
        if dec.seeds.is_empty() {
            return Err(field("decomposition.seeds", "need at least one seed"));
        }
        let [tr, va, te] = dec.fractions;
        SplitFractions { train: tr, val: va, test: te }
            .validate()
            .map_err(|e| field("decomposition.fractions", e.to_string()))?;
        if let ScenarioSelection::List(list) = &dec.scenarios {
            if list.is_empty() {
                return Err(field("decomposition.scenarios", "empty list"));
            }
            if let Some(s) = list.iter().find(|s| !s.valid_for(d.k())) {
                return Err(field("decomposition.scenarios", format!("{s} is not defined for k = 1")));
            }
        }
        if self.estimators.is_empty() {
            return Err(field("estimators", "need at least one estimator"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, e) in self.estimators.iter().enumerate() {
            let at = format!("estimators[{i}]");
            if !names.insert(e.display_name()) {
                return Err(field(&format!("{at}.name"), format!("duplicate name `{}`", e.display_name())));
            }
            if e.budget == Some(0) {
                return Err(field(&format!("{at}.budget"), "must be >= 1"));
            }
            match (e.family, &e.command) {
                (Family::External, None) => return Err(field(&format!("{at}.command"), "required for external")),
                (Family::External, Some(c)) if c.is_empty() => {
                    return Err(field(&format!("{at}.command"), "empty command line"))
                }
                (f, Some(_)) if f != Family::External => {
                    return Err(field(&format!("{at}.command"), "only valid for external estimators"))
                }
                _ => {}
            }
            if !(e.timeout_secs > 0.0) || !e.timeout_secs.is_finite() {
                return Err(field(&format!("{at}.timeout_secs"), "must be > 0"));
            }
            if e.space.values().any(Vec::is_empty) {
                return Err(field(&format!("{at}.space"), "empty candidate list"));
            }
        }
        let ev = &self.evaluation;
        if ev.grid < 2 {
            return Err(field("evaluation.grid", "need at least 2 points"));
        }
        if ev.bins < 2 {
            return Err(field("evaluation.bins", "need at least 2 bins"));
        }
        Ok(())
    }

    /// Materializes the covariates, surface and assignment mechanisms.
    pub fn build_dgp(&self) -> Result<DgpSpec, ConfigError> {
        let d = &self.dgp;
        let dgp_err = |e: crate::dgp::DgpError| field("dgp", e.to_string());
        let cov_seed = SeedTree::new(d.covariate_seed).child("covariates");
        let covariates = match &d.covariates {
            Some(file) => {
                let sidecar = file.binary_sidecar.as_ref().map(|p| self.resolve(p));
                let mut x = super::covariates::load_covariates(&self.resolve(&file.path), sidecar.as_deref())
                    .map_err(|e| field("dgp.covariates", e.to_string()))?;
                if !file.binary.is_empty() {
                    x = x.with_binary(&file.binary).map_err(|e| field("dgp.covariates.binary", e.to_string()))?;
                }
                x
            }
            None => {
                let kind = match d.kind {
                    DgpKind::Ihdp3 => CovariateKind::Ihdp3Surrogate,
                    _ => CovariateKind::Synth1Style,
                };
                synthetic_covariates(kind, d.n(), d.m(), &cov_seed).map_err(dgp_err)?
            }
        };
        let k = d.k();
        let surface = match (d.kind, d.surface) {
            (DgpKind::Ihdp3, _) | (DgpKind::CustomFromFiles, Some(SurfaceKind::Ihdp3)) => SurfaceKind::Ihdp3,
            (DgpKind::Synth1Style, _) | (DgpKind::CustomFromFiles, Some(SurfaceKind::Synth1Style)) => {
                SurfaceKind::Synth1Style
            }
            _ => SurfaceKind::Tcga2Style,
        };
        if surface != SurfaceKind::Tcga2Style && k != 1 {
            return Err(field("dgp.k", "ihdp3 and synth1-style surfaces have a single intervention"));
        }
        let response: Arc<dyn ResponseSurface> = match surface {
            SurfaceKind::Ihdp3 => Arc::new(Ihdp3Surface::new(&covariates).map_err(dgp_err)?),
            SurfaceKind::Synth1Style => Arc::new(Synth1Surface::new(&covariates).map_err(dgp_err)?),
            SurfaceKind::Tcga2Style => Arc::new(
                Tcga2Surface::new(&covariates, k, &SeedTree::new(d.surface_seed).child("surface")).map_err(dgp_err)?,
            ),
        };
        let spec = DgpSpec {
            name: d.display_name(),
            covariates: Arc::new(covariates),
            space: InterventionSpace::with_count(k).map_err(|e| field("dgp.k", e.to_string()))?,
            t_assign: InterventionAssignment { kappa: d.kappa() },
            d_assign: DoseAssignment { alpha: d.alpha() },
            response,
            noise_sigma: d.sigma,
        };
        spec.validate().map_err(dgp_err)?;
        Ok(spec)
    }

    fn estimator_plan(&self, e: &EstimatorConfig, at: &str) -> Result<EstimatorPlan, ConfigError> {
        let mut spec = EstimatorSpec::new(e.display_name(), e.family);
        if let Some(cmd) = &e.command {
            let program = if cmd[0].contains('/') { self.resolve(Path::new(&cmd[0])) } else { PathBuf::from(&cmd[0]) };
            spec.external = Some(ExternalCommand {
                program: program.to_string_lossy().into_owned(),
                args: cmd[1..].to_vec(),
                timeout: Duration::from_secs_f64(e.timeout_secs),
            });
        }
        if let Some(hp) = &e.hyperparams {
            return Ok(EstimatorPlan::fixed(spec, hp));
        }
        let space = e
            .family
            .default_space()
            .with_overrides(&e.space)
            .map_err(|err| field(&format!("{at}.space"), err.to_string()))?;
        let budget = e.budget.unwrap_or(if e.family == Family::External { 1 } else { 10 });
        Ok(EstimatorPlan { spec, space, budget })
    }

    /// Builds the full plan. `seed` replaces the configured seed list.
    pub fn to_plan(&self, seed: Option<u64>) -> Result<DecompositionPlan, ConfigError> {
        let dgp = self.build_dgp()?;
        let estimators = self
            .estimators
            .iter()
            .enumerate()
            .map(|(i, e)| self.estimator_plan(e, &format!("estimators[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let seeds = seed.map_or_else(|| self.decomposition.seeds.clone(), |s| vec![s]);
        let [train, val, test] = self.decomposition.fractions;
        let plan_err = |e: crate::decomposition::DecompositionError| field("decomposition", e.to_string());
        let mut plan = build_plan(dgp, estimators, seeds, SplitFractions { train, val, test })
            .map_err(plan_err)?
            .with_order(self.decomposition.order);
        if let ScenarioSelection::List(list) = &self.decomposition.scenarios {
            plan = plan.with_scenarios(list).map_err(plan_err)?;
        }
        plan.tune_per_scenario = self.decomposition.tune_per_scenario;
        plan.grid = DoseGrid::uniform(self.evaluation.grid).map_err(|e| field("evaluation.grid", e.to_string()))?;
        plan.bins = self.evaluation.bins;
        plan.profiles = self.evaluation.profiles;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"dgp": {"kind": "ihdp3"}, "estimators": [{"family": "ridge"}]}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.evaluation.grid, 65);
        assert_eq!(cfg.decomposition.fractions, [0.7, 0.1, 0.2]);
        assert_eq!(cfg.decomposition.seeds, vec![0]);
        assert!(cfg.decomposition.tune_per_scenario);
        let plan = cfg.to_plan(None).unwrap();
        assert_eq!(plan.scenarios.len(), 3);
        assert_eq!(plan.dgp.covariates.rows(), 747);
        assert_eq!(plan.dgp.covariates.cols(), 25);
        assert_eq!(plan.estimators[0].budget, 10);
    }

    #[test]
    fn rejects_small_alpha() {
        let cfg = parse_config(r#"{"dgp": {"kind": "ihdp3", "alpha": 0.5}, "estimators": [{"family": "ridge"}]}"#)
            .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("α ≥ 1"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let err = parse_config("{\n  \"dgp\": {\"kind\": \"ihdp3\"},\n  \"foo\": 1,\n  \"estimators\": []\n}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("foo"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        let err = parse_config(r#"{"dgp": {"kind": "ihdp3", "bar": 2}, "estimators": []}"#).unwrap_err().to_string();
        assert!(err.contains("bar"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let check = |text: &str, name: &str| {
            let err = parse_config(text).unwrap().validate().unwrap_err().to_string();
            assert!(err.contains(name), "{err}");
        };
        check(r#"{"dgp": {"kind": "tcga2-style"}, "estimators": [{"family": "ridge"}, {"family": "ridge"}]}"#, "estimators[1].name");
        check(r#"{"dgp": {"kind": "tcga2-style"}, "estimators": [{"family": "external"}]}"#, "estimators[0].command");
        check(r#"{"dgp": {"kind": "ihdp3"}, "decomposition": {"scenarios": ["t-confounded"]}, "estimators": [{"family": "ridge"}]}"#, "decomposition.scenarios");
        check(r#"{"dgp": {"kind": "custom-from-files"}, "estimators": [{"family": "ridge"}]}"#, "dgp.covariates");
        check(r#"{"dgp": {"kind": "tcga2-style"}, "decomposition": {"fractions": [0.5, 0.1, 0.1]}, "estimators": [{"family": "ridge"}]}"#, "decomposition.fractions");
    }

    #[test]
    fn explicit_scenarios_follow_decomposition_order() {
        let cfg = parse_config(
            r#"{"dgp": {"kind": "tcga2-style", "n": 60, "m": 4},
                "decomposition": {"scenarios": ["d-confounded", "randomized"]},
                "estimators": [{"family": "ridge", "space": {"lambda": [0.5]}}]}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let plan = cfg.to_plan(Some(9)).unwrap();
        assert_eq!(plan.scenarios, vec![ScenarioId::Randomized, ScenarioId::DConfounded]);
        assert_eq!(plan.seeds, vec![9]);
        assert_eq!(plan.estimators[0].space.size(), 1);
    }
}
