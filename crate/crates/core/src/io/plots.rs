//! SVG plots and plotting data.

use std::fmt::Write as _;
use std::path::Path;

use super::results::ResultsTable;
use crate::data::CovariateMatrix;
use crate::dgp::ResponseSurface;
use crate::evaluation::{DoseErrorProfile, DoseGrid};

const W: f64 = 520.0;
const H: f64 = 260.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let base = H - PAD;
    let _ = writeln!(out, r#"<line x1="{PAD}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, W - PAD);
    let _ = writeln!(out, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{base}" stroke="black"/>"#);
}

/// Per-bin mean squared error (bars) over the training-dose histogram
/// (light bars, own scale) for one intervention.
pub fn profile_svg(profile: &DoseErrorProfile, estimator: &str, t: usize) -> String {
    let bins = profile.bins;
    let errors: Vec<f64> = profile.errors[t].iter().map(|e| if e.is_finite() { *e } else { 0.0 }).collect();
    let counts = &profile.counts[t];
    let max_err = errors.iter().copied().fold(0.0, f64::max);
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let plot_h = H - 2.0 * PAD;
    let slot = (W - 2.0 * PAD) / bins as f64;
    let base = H - PAD;
    let mut out = String::new();
    header(&mut out, &format!("{estimator}: error per dose bin, intervention {t}"));
    for (b, &c) in counts.iter().enumerate() {
        let h = if max_count > 0 { plot_h * c as f64 / max_count as f64 } else { 0.0 };
        let x = PAD + b as f64 * slot;
        let _ = writeln!(
            out,
            r##"<rect class="hist-bar" x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#bbbbbb" fill-opacity="0.5"><title>{c} training units</title></rect>"##,
            base - h,
            slot,
        );
    }
    for (b, &e) in errors.iter().enumerate() {
        let h = if max_err > 0.0 { plot_h * e / max_err } else { 0.0 };
        let x = PAD + b as f64 * slot + slot * 0.25;
        let _ = writeln!(
            out,
            r#"<rect class="error-bar" x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"><title>MSE {e}</title></rect>"#,
            base - h,
            slot * 0.5,
            PALETTE[0],
        );
    }
    for b in 0..=bins {
        let x = PAD + b as f64 * slot;
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="9">{:.1}</text>"#,
            base + 12.0,
            b as f64 / bins as f64
        );
    }
    let _ = writeln!(out, r#"<text x="{PAD}" y="{:.2}" font-size="9">max MSE {max_err:.3}</text>"#, PAD - 6.0);
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart of mean MISE: one group per scenario, one bar per
/// estimator.
pub fn mise_chart_svg(table: &ResultsTable) -> String {
    let agg = table.aggregate();
    let values: Vec<Vec<f64>> = table
        .scenarios
        .iter()
        .map(|s| {
            table
                .estimators
                .iter()
                .map(|e| agg.get(&(e.clone(), *s)).map_or(f64::NAN, |a| a.mean))
                .collect()
        })
        .collect();
    let max = values.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let plot_h = H - 2.0 * PAD;
    let group = (W - 2.0 * PAD) / table.scenarios.len().max(1) as f64;
    let bar = group * 0.8 / table.estimators.len().max(1) as f64;
    let base = H - PAD;
    let mut out = String::new();
    header(&mut out, &format!("{}: MISE per scenario", table.dataset));
    for (g, (s, row)) in table.scenarios.iter().zip(&values).enumerate() {
        let gx = PAD + g as f64 * group + group * 0.1;
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let h = if max > 0.0 { plot_h * v / max } else { 0.0 };
            let _ = writeln!(
                out,
                r#"<rect class="mise-bar" x="{:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                gx + j as f64 * bar,
                base - h,
                PALETTE[j % PALETTE.len()],
                escape(&table.estimators[j]),
                s.name(),
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            gx + group * 0.4,
            base + 14.0,
            escape(s.header())
        );
    }
    for (j, e) in table.estimators.iter().enumerate() {
        let y = PAD + 12.0 * j as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/><text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
            W - PAD - 70.0,
            y - 7.0,
            PALETTE[j % PALETTE.len()],
            W - PAD - 58.0,
            y,
            escape(e)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Rows `(unit, t, d, mu)` for every listed unit, intervention and grid dose.
pub fn write_curves_csv(
    x: &CovariateMatrix,
    response: &dyn ResponseSurface,
    k: usize,
    units: &[usize],
    grid: &DoseGrid,
    path: &Path,
) -> std::io::Result<usize> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "t", "d", "mu"])?;
    let mut rows = 0;
    for &i in units {
        for t in 0..k {
            for &d in grid.points() {
                let mu = response.evaluate(t, d, x.row(i));
                w.write_record([i.to_string(), t.to_string(), format!("{d}"), format!("{mu}")])?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::FnSurface;
    use std::collections::BTreeSet;

    #[test]
    fn profile_svg_counts_bars() {
        let profile = DoseErrorProfile {
            bins: 10,
            errors: vec![vec![0.0; 10], (0..10).map(|b| b as f64).collect()],
            counts: vec![vec![3; 10], vec![1; 10]],
        };
        for t in 0..2 {
            let svg = profile_svg(&profile, "mlp", t);
            assert_eq!(svg.matches(r#"class="error-bar""#).count(), 10);
            assert_eq!(svg.matches(r#"class="hist-bar""#).count(), 10);
        }
        let zero = profile_svg(&profile, "mlp", 0);
        assert_eq!(zero.matches(r#"height="0.00""#).count(), 10);
        assert_eq!(zero.matches(&format!(r#"y="{:.2}""#, H - PAD)).count(), 10);
    }

    #[test]
    fn curve_rows() {
        let dir = tempfile::tempdir().unwrap();
        let x = CovariateMatrix::new(vec!["a".into()], (0..20).map(f64::from).collect(), BTreeSet::new()).unwrap();
        let p = dir.path().join("curves.csv");
        let surface = FnSurface(|t: usize, d: f64, x: &[f64]| t as f64 + d * x[0]);
        let rows = write_curves_csv(&x, &surface, 3, &[0, 4, 7, 9, 12], &DoseGrid::default(), &p).unwrap();
        assert_eq!(rows, 5 * 3 * 65);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 3 * 65);
    }
}
