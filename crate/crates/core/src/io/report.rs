//! Markdown rendering of decomposition tables.

use std::fmt::Write as _;

use super::results::ResultsTable;
use crate::decomposition::ScenarioDiagnostics;
use crate::evaluation::Aggregate;

fn cell_text(a: Option<&Aggregate>) -> String {
    let Some(a) = a else { return "n/a".into() };
    if a.done == 0 {
        return "n/a".into();
    }
    let mut s = if a.done == 1 { format!("{:.2}", a.mean) } else { format!("{:.2} ± {:.2}", a.mean, a.std) };
    if a.failed > 0 {
        let _ = write!(s, " ({}/{})", a.done, a.total());
    }
    s
}

/// MISE table: one row per estimator, one column per scenario in
/// decomposition order, best mean per column in bold.
pub fn render_table(table: &ResultsTable) -> String {
    let agg = table.aggregate();
    let mut out = String::new();
    let _ = writeln!(out, "### {}\n", table.dataset);
    let _ = write!(out, "| Method |");
    for s in &table.scenarios {
        let _ = write!(out, " {} |", s.header());
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(table.scenarios.len()));
    out.push('\n');
    let best: Vec<Option<&str>> = table
        .scenarios
        .iter()
        .map(|s| {
            table
                .estimators
                .iter()
                .filter_map(|e| agg.get(&(e.clone(), *s)).filter(|a| a.done > 0).map(|a| (e.as_str(), a.mean)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(e, _)| e)
        })
        .collect();
    for e in &table.estimators {
        let _ = write!(out, "| {e} |");
        for (s, b) in table.scenarios.iter().zip(&best) {
            let text = cell_text(agg.get(&(e.clone(), *s)));
            if *b == Some(e.as_str()) {
                let _ = write!(out, " **{text}** |");
            } else {
                let _ = write!(out, " {text} |");
            }
        }
        out.push('\n');
    }
    let seeds = table.seeds.len();
    let _ = writeln!(
        out,
        "\nMISE on the test split; mean ± sample std over {seeds} seed{}.",
        if seeds == 1 { "" } else { "s" }
    );
    out
}

/// Per-scenario distribution diagnostics, first seed only.
pub fn render_diagnostics(diags: &[ScenarioDiagnostics]) -> String {
    let Some(first) = diags.first() else { return String::new() };
    let mut out = String::new();
    let _ = writeln!(out, "### Scenario diagnostics (seed {})\n", first.seed);
    out.push_str("| Scenario | dose KS | uniform doses | T χ² | uniform T | flagged covariates |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for d in diags.iter().filter(|d| d.seed == first.seed) {
        let flagged = d.confounding.flagged().count();
        let _ = writeln!(
            out,
            "| {} | {:.4} | {} | {:.2} | {} | {} / {} |",
            d.scenario.header(),
            d.dose_uniformity.statistic,
            if d.dose_uniformity.pass { "yes" } else { "no" },
            d.intervention_uniformity.statistic,
            if d.intervention_uniformity.pass { "yes" } else { "no" },
            flagged,
            d.confounding.columns.len(),
        );
    }
    out
}

pub fn render_report(table: &ResultsTable, diags: &[ScenarioDiagnostics]) -> String {
    let mut out = String::from("# Decomposition results\n\n");
    out.push_str(&render_table(table));
    if !diags.is_empty() {
        out.push('\n');
        out.push_str(&render_diagnostics(diags));
    }
    out
}
