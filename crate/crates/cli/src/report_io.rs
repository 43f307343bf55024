//! Metric-report emission: per-class CSV with a MEAN row, a machine
//! readable JSON document, and an SVG bar chart of the per-class
//! symmetry-aware AUC.

use std::path::Path;

use pose6d::metrics::{ClassMetrics, MetricReport};
use serde_json::json;

use crate::IoFormatError;

pub const REPORT_HEADER: &str =
    "class,count,auc_add,auc_add_s,auc_add_s_combined,ar_0.1m,ar_0.1d";

fn row_to_csv(label: &str, m: &ClassMetrics) -> String {
    format!(
        "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        m.count, m.auc_add, m.auc_adds, m.auc_add_s, m.ar_01m, m.ar_01d
    )
}

pub fn report_to_csv(report: &MetricReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in &report.per_class {
        let label = row
            .class_id
            .map(|c| c.to_string())
            .unwrap_or_else(|| "?".into());
        out.push_str(&row_to_csv(&label, row));
    }
    out.push_str(&row_to_csv("MEAN", &report.mean));
    out
}

fn row_to_json(m: &ClassMetrics) -> serde_json::Value {
    json!({
        "class_id": m.class_id,
        "count": m.count,
        "auc_add": m.auc_add,
        "auc_add_s": m.auc_adds,
        "auc_add_s_combined": m.auc_add_s,
        "ar_0.1m": m.ar_01m,
        "ar_0.1d": m.ar_01d,
    })
}

pub fn report_to_json(report: &MetricReport) -> serde_json::Value {
    json!({
        "per_class": report.per_class.iter().map(row_to_json).collect::<Vec<_>>(),
        "mean": row_to_json(&report.mean),
    })
}

/// Bar chart of per-class combined AUC, plus a MEAN bar.
pub fn report_to_svg(report: &MetricReport) -> String {
    let bar_w = 42.0;
    let gap = 14.0;
    let chart_h = 220.0;
    let left = 50.0;
    let bottom = 260.0;
    let n = report.per_class.len() + 1;
    let width = left + (bar_w + gap) * n as f64 + 30.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"300\" \
         font-family=\"monospace\" font-size=\"12\">\n",
        width
    );
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"20\">AUC of symmetry-aware mean point displacement (max 0.1 m)</text>\n"
    ));
    // y axis with 0/0.5/1 ticks
    for (frac, label) in [(0.0, "0.0"), (0.5, "0.5"), (1.0, "1.0")] {
        let y = bottom - chart_h * frac;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
            left - 6.0,
            width - 20.0
        ));
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\">{label}</text>\n",
            y + 4.0
        ));
    }
    let mut x = left;
    #[allow(unused_mut)]
    let bar = |x: f64, value: f64, label: &str, fill: &str| -> String {
        let h = chart_h * value.clamp(0.0, 1.0);
        format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"{fill}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{:.3}</text>\n",
            bottom - h,
            x + bar_w / 2.0,
            bottom + 16.0,
            x + bar_w / 2.0,
            bottom - h - 4.0,
            value
        )
    };
    for row in &report.per_class {
        let label = row
            .class_id
            .map(|c| c.to_string())
            .unwrap_or_else(|| "?".into());
        svg.push_str(&bar(x, row.auc_add_s, &label, "#4477aa"));
        x += bar_w + gap;
    }
    svg.push_str(&bar(x, report.mean.auc_add_s, "MEAN", "#aa4444"));
    svg.push_str("</svg>\n");
    svg
}

pub fn write_report(dir: &Path, report: &MetricReport) -> Result<(), IoFormatError> {
    crate::write_atomic(&dir.join("report.csv"), report_to_csv(report).as_bytes())?;
    crate::write_atomic(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&report_to_json(report))?.as_bytes(),
    )?;
    crate::write_atomic(&dir.join("report.svg"), report_to_svg(report).as_bytes())?;
    Ok(())
}
