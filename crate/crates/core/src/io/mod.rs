//! Configuration, covariate files, result tables, reports and plots.

pub mod config;
pub mod covariates;
pub mod plots;
pub mod report;
pub mod results;

use std::path::Path;

use serde_json::Value;

use crate::decomposition::{DecompositionPlan, DecompositionReport};
use config::OutputFormat;
use results::ResultsTable;

/// Output switches for [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub formats: Vec<OutputFormat>,
    pub record_timings: bool,
    pub curve_units: usize,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            formats: vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Markdown, OutputFormat::Svg],
            record_timings: false,
            curve_units: 5,
        }
    }
}

/// Writes every requested artifact of a finished run into `dir`.
pub fn write_outputs(
    report: &DecompositionReport,
    plan: &DecompositionPlan,
    config_echo: &Value,
    dir: &Path,
    opts: &OutputOptions,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let table = ResultsTable::from_report(report, opts.record_timings);
    let has = |f: OutputFormat| opts.formats.contains(&f);
    if has(OutputFormat::Csv) {
        results::write_results_csv(&table, &dir.join("results.csv"))?;
        results::write_timings_csv(report, &dir.join("timings.csv"))?;
    }
    if has(OutputFormat::Json) {
        results::write_json(&results::results_json(&table), &dir.join("results.json"))?;
        results::write_json(&report.diagnostics, &dir.join("diagnostics.json"))?;
        let profiles: Vec<_> = report
            .cells
            .iter()
            .filter_map(|c| c.profile.as_ref().map(|p| serde_json::json!({ "cell": c.key, "profile": p })))
            .collect();
        results::write_json(&profiles, &dir.join("profiles.json"))?;
    }
    results::write_json(&results::manifest(config_echo, &plan.seeds), &dir.join("manifest.json"))?;
    if has(OutputFormat::Markdown) {
        std::fs::write(dir.join("report.md"), report::render_report(&table, &report.diagnostics))?;
    }
    if has(OutputFormat::Svg) {
        let plots_dir = dir.join("plots");
        std::fs::create_dir_all(&plots_dir)?;
        std::fs::write(plots_dir.join("mise.svg"), plots::mise_chart_svg(&table))?;
        let first_seed = plan.seeds[0];
        for c in report.cells.iter().filter(|c| c.key.seed == first_seed) {
            if let Some(p) = &c.profile {
                for t in 0..p.errors.len() {
                    let name = format!("profile_{}_{}_t{t}.svg", sanitize(&c.key.estimator), c.key.scenario.name());
                    std::fs::write(plots_dir.join(name), plots::profile_svg(p, &c.key.estimator, t))?;
                }
            }
        }
        let x = &plan.dgp.covariates;
        let units: Vec<usize> = (0..x.rows().min(opts.curve_units)).collect();
        plots::write_curves_csv(
            x,
            plan.dgp.response.as_ref(),
            plan.dgp.space.k(),
            &units,
            &plan.grid,
            &plots_dir.join("curves.csv"),
        )?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
