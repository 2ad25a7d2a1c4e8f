//! Result tables and loss-curve plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{IoContext, Result};
use crate::eval::{cell, format_table};
use crate::record::ExperimentRecord;
use crate::trainer::{read_metrics, EpochRow, MetricRow};

/// Side-by-side accuracy table, one row per record. Records without a final
/// report print dashes.
pub fn records_table(records: &[ExperimentRecord]) -> String {
    let with_report: Vec<(String, &smcl_core::EvalReport)> = records
        .iter()
        .filter_map(|r| r.final_report.as_ref().map(|rep| (r.label.clone(), rep)))
        .collect();
    let mut out = format_table(&with_report);
    for r in records.iter().filter(|r| r.final_report.is_none()) {
        let _ = writeln!(out, "{}  (no evaluation: {:?})", r.label, r.status);
    }
    out
}

/// One labeled accuracy per column, in the given order.
pub fn single_row_table(row_label: &str, columns: &[(String, Option<f64>)]) -> String {
    let mut header = format!("{:<10}", "");
    let mut values = format!("{row_label:<10}");
    for (name, v) in columns {
        let w = name.len().max(7);
        let _ = write!(header, "  {name:>w$}");
        let _ = write!(values, "  {:>w$}", cell(*v));
    }
    format!("{header}\n{values}\n")
}

/// A grid of accuracies: rows by columns.
pub fn grid_table(columns: &[String], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let label_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut out = format!("{:<label_w$}", "");
    for c in columns {
        let _ = write!(out, "  {c:>9}");
    }
    out.push('\n');
    for (name, values) in rows {
        let _ = write!(out, "{name:<label_w$}");
        for v in values {
            let _ = write!(out, "  {:>9}", cell(*v));
        }
        out.push('\n');
    }
    out
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// SVG line plot of the per-epoch loss components.
pub fn loss_curve_svg(title: &str, epochs: &[EpochRow]) -> String {
    let series: [(&str, &str, fn(&EpochRow) -> f64); 3] = [
        ("total", "#1f77b4", |r| r.total),
        ("mixed CE", "#d62728", |r| r.mce),
        ("mixed SupCon", "#2ca02c", |r| r.msc),
    ];
    let ymax = epochs
        .iter()
        .flat_map(|r| series.iter().map(move |(_, _, f)| f(r)))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let xmax = epochs.last().map(|r| r.epoch).unwrap_or(0).max(1) as f64;
    let px = |epoch: usize| MARGIN + (PLOT_W - 2.0 * MARGIN) * epoch as f64 / xmax;
    let py = |v: f64| PLOT_H - MARGIN - (PLOT_H - 2.0 * MARGIN) * v / ymax;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{lbl}\" font-family=\"sans-serif\" font-size=\"11\">epoch 0</text>\n\
         <text x=\"{r}\" y=\"{lbl}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">epoch {xmax}</text>\n\
         <text x=\"4\" y=\"{MARGIN}\" font-family=\"sans-serif\" font-size=\"11\">{ymax:.3}</text>\n",
        escape(title),
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN,
        lbl = PLOT_H - MARGIN + 16.0,
    );
    for (i, (name, color, f)) in series.iter().enumerate() {
        let points: Vec<String> = epochs
            .iter()
            .filter(|r| f(r).is_finite())
            .map(|r| format!("{:.1},{:.1}", px(r.epoch), py(f(r))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            PLOT_W - MARGIN - 90.0,
            MARGIN + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Serialize)]
struct ReportJson<'a> {
    records: &'a [ExperimentRecord],
}

/// Writes `table.txt`, `report.json` and one `loss-<run>.svg` per record.
pub fn render(records: &[ExperimentRecord], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let table = records_table(records);
    let table_path = out_dir.join("table.txt");
    fs::write(&table_path, &table).at(&table_path)?;
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, serde_json::to_vec_pretty(&ReportJson { records })?).at(&json_path)?;
    for record in records {
        let epochs: Vec<EpochRow> = if record.metrics_path.exists() {
            read_metrics(&record.metrics_path)?
                .into_iter()
                .filter_map(|row| match row {
                    MetricRow::Epoch(e) => Some(e),
                    MetricRow::Step(_) => None,
                })
                .collect()
        } else {
            Vec::new()
        };
        let path = out_dir.join(format!("loss-{}.svg", record.run_id));
        fs::write(&path, loss_curve_svg(&record.label, &epochs)).at(&path)?;
    }
    Ok(())
}
