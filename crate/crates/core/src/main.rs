use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dosebench::decomposition::{execute_plan, materialize_replication};
use dosebench::evaluation::{dose_uniformity, intervention_uniformity, DoseGrid};
use dosebench::io::config::{load_config, ExperimentConfig};
use dosebench::io::results::{read_results_json, write_json, ResultsTable};
use dosebench::io::{covariates, plots, report, write_outputs, OutputOptions};

#[derive(Parser)]
#[command(name = "dosebench", version, about = "Decomposition benchmarks for dose-response estimators")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single replication with this root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize and export the scenario datasets.
    Generate,
    /// Run the full decomposition and write results.
    Decompose,
    /// Score a predictions file (unit,t,d,mu_hat) against the DGP.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Re-render report.md and the MISE chart from results.json.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    load_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.output.dir))
}

fn decompose(cli: &Cli) -> Result<bool, Failure> {
    let cfg = config(cli)?;
    let plan = cfg.to_plan(cli.seed).map_err(|e| Failure::Config(e.to_string()))?;
    let dir = out_dir(cli, &cfg);
    if !cli.quiet {
        eprintln!(
            "running {} cells ({} estimators x {} scenarios x {} seeds) on {} worker(s)",
            plan.cells().len(),
            plan.estimators.len(),
            plan.scenarios.len(),
            plan.seeds.len(),
            cli.workers
        );
    }
    let report = execute_plan(&plan, cli.workers).map_err(runtime)?;
    let echo = serde_json::to_value(&cfg).map_err(runtime)?;
    let opts = OutputOptions {
        formats: cfg.output.formats.clone(),
        record_timings: cfg.output.record_timings,
        curve_units: cfg.evaluation.curve_units,
    };
    write_outputs(&report, &plan, &echo, &dir, &opts).map_err(runtime)?;
    if !cli.quiet {
        print!("{}", report::render_table(&ResultsTable::from_report(&report, false)));
        for c in report.cells.iter().filter(|c| c.error.is_some()) {
            eprintln!(
                "failed: {} / {} / seed {}: {}",
                c.key.estimator,
                c.key.scenario,
                c.key.seed,
                c.error.as_deref().unwrap_or("")
            );
        }
        eprintln!("results written to {}", dir.display());
    }
    Ok(report.failed() == 0)
}

fn generate(cli: &Cli) -> Result<bool, Failure> {
    let cfg = config(cli)?;
    let plan = cfg.to_plan(cli.seed).map_err(|e| Failure::Config(e.to_string()))?;
    let dir = out_dir(cli, &cfg).join("datasets");
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    covariates::write_covariates(&plan.dgp.covariates, &dir.join("covariates.csv")).map_err(runtime)?;
    for &seed in &plan.seeds {
        let reps = materialize_replication(&plan.dgp, &plan.scenarios, plan.fractions, seed, plan.order)
            .map_err(runtime)?;
        let sdir = dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&sdir).map_err(runtime)?;
        let mut diags = BTreeMap::new();
        for ds in &reps {
            covariates::write_scenario(ds, &sdir.join(format!("{}.csv", ds.scenario.name()))).map_err(runtime)?;
            diags.insert(
                ds.scenario.name(),
                json!({
                    "dose_uniformity": dose_uniformity(&ds.d),
                    "intervention_uniformity": intervention_uniformity(&ds.t, ds.space.k()),
                    "seed_record": ds.seed_record.describe(),
                }),
            );
        }
        let splits = &reps[0].splits;
        write_json(&json!({ "train": splits.train, "val": splits.val, "test": splits.test }), &sdir.join("splits.json"))
            .map_err(runtime)?;
        write_json(&diags, &sdir.join("diagnostics.json")).map_err(runtime)?;
        if !cli.quiet {
            eprintln!("seed {seed}: {} scenarios written to {}", reps.len(), sdir.display());
        }
    }
    Ok(true)
}

/// Predictions CSV: `unit,t,d,mu_hat` covering every grid dose for each
/// listed unit and intervention.
fn evaluate(cli: &Cli, predictions: &Path) -> Result<bool, Failure> {
    let cfg = config(cli)?;
    let plan = cfg.to_plan(cli.seed).map_err(|e| Failure::Config(e.to_string()))?;
    let grid = DoseGrid::uniform(cfg.evaluation.grid).map_err(|e| Failure::Config(e.to_string()))?;
    let g = grid.len();
    let k = plan.dgp.space.k();
    let x = &plan.dgp.covariates;
    let mut reader = csv::Reader::from_path(predictions).map_err(runtime)?;
    let mut values: BTreeMap<(usize, usize), Vec<Option<f64>>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(runtime)?;
        let bad = || Failure::Runtime(format!("{}: line {}: malformed row", predictions.display(), line + 2));
        if rec.len() != 4 {
            return Err(bad());
        }
        let unit: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let t: usize = rec[1].trim().parse().map_err(|_| bad())?;
        let d: f64 = rec[2].trim().parse().map_err(|_| bad())?;
        let y: f64 = rec[3].trim().parse().map_err(|_| bad())?;
        let j = (d * (g - 1) as f64).round() as usize;
        if unit >= x.rows() || t >= k || j >= g || (grid.points()[j] - d).abs() > 1e-9 {
            return Err(Failure::Runtime(format!(
                "{}: line {}: (unit {unit}, t {t}, d {d}) is not a grid query",
                predictions.display(),
                line + 2
            )));
        }
        values.entry((unit, t)).or_insert_with(|| vec![None; g])[j] = Some(y);
    }
    let units: std::collections::BTreeSet<usize> = values.keys().map(|(u, _)| *u).collect();
    if units.is_empty() {
        return Err(Failure::Runtime("no predictions".into()));
    }
    let mut total = 0.0;
    for &u in &units {
        for t in 0..k {
            let preds = values.get(&(u, t)).ok_or_else(|| Failure::Runtime(format!("unit {u}: missing t = {t}")))?;
            let sq: Vec<f64> = preds
                .iter()
                .zip(grid.points())
                .map(|(p, &d)| {
                    p.map(|p| (plan.dgp.response.evaluate(t, d, x.row(u)) - p).powi(2))
                        .ok_or_else(|| Failure::Runtime(format!("unit {u}, t = {t}: missing d = {d}")))
                })
                .collect::<Result<_, _>>()?;
            total += grid.integrate(&sq);
        }
    }
    let mise = total / (units.len() * k) as f64;
    let result = json!({ "dataset": plan.dgp.name, "units": units.len(), "k": k, "grid": g, "mise": mise });
    let dir = out_dir(cli, &cfg);
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    write_json(&result, &dir.join("evaluation.json")).map_err(runtime)?;
    if !cli.quiet {
        println!("{}", serde_json::to_string_pretty(&result).map_err(runtime)?);
    }
    Ok(true)
}

fn report_cmd(cli: &Cli, results: Option<&Path>) -> Result<bool, Failure> {
    let path = match (results, &cli.out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(out)) => out.join("results.json"),
        (None, None) => {
            let cfg = config(cli)?;
            out_dir(cli, &cfg).join("results.json")
        }
    };
    let table = read_results_json(&path).map_err(Failure::Runtime)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let diags: Vec<dosebench::decomposition::ScenarioDiagnostics> = std::fs::read_to_string(dir.join("diagnostics.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let md = report::render_report(&table, &diags);
    std::fs::write(dir.join("report.md"), &md).map_err(runtime)?;
    std::fs::create_dir_all(dir.join("plots")).map_err(runtime)?;
    std::fs::write(dir.join("plots").join("mise.svg"), plots::mise_chart_svg(&table)).map_err(runtime)?;
    if !cli.quiet {
        print!("{md}");
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate => generate(&cli),
        Command::Decompose => decompose(&cli),
        Command::Evaluate { predictions } => evaluate(&cli, predictions),
        Command::Report { results } => report_cmd(&cli, results.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(f) => {
            let (Failure::Config(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
