//! Report emission: JSON-lines records, CSV summary, and SVG success plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::bench::{overlap_precision, AblationReport, RunResult};
use crate::error::Result;
use crate::tracker::Variant;
use crate::types::BoundingBox;

/// One JSON object per (sequence, variant) record.
pub fn write_results_jsonl(records: &[RunResult], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Four-row summary table in the fixed Baseline, RC, RCB, RCG order.
pub fn write_summary_csv(report: &AblationReport, path: &Path) -> Result<()> {
    let mut out = String::from("variant,mean_op50,mean_auc,failures_simplified,fps\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{:.3}",
            row.variant, row.mean_op50, row.mean_auc, row.failures, row.fps
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plain-text rendering of the ablation table.
pub fn format_ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>22} {:>8}",
        "variant", "mean OP50", "mean AUC", "failures (simplified)", "fps"
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>10.4} {:>22} {:>8.2}",
            row.variant, row.mean_op50, row.mean_auc, row.failures, row.fps
        );
    }
    out
}

/// Success-rate curve at the 101 overlap thresholds, averaged over every
/// record of one variant.
fn mean_success_curve(records: &[RunResult], variant: Variant) -> Vec<f64> {
    let per: Vec<&RunResult> = records
        .iter()
        .filter(|r| r.variant == variant.name())
        .collect();
    (0..=100)
        .map(|i| {
            let t = i as f64 / 100.0;
            if per.is_empty() {
                0.0
            } else {
                per.iter()
                    .map(|r| overlap_precision(&r.per_frame_iou, t))
                    .sum::<f64>()
                    / per.len() as f64
            }
        })
        .collect()
}

const CURVE_COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Writes an overlap success plot (success rate vs threshold, one line per
/// variant) as a standalone SVG.
pub fn write_success_svg(records: &[RunResult], path: &Path) -> Result<()> {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">Overlap success plot</text>"#,
        w / 2.0
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        mt + ph,
        ml + pw,
        mt + ph
    );
    let _ = writeln!(svg, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, mt + ph);
    for i in 0..=5 {
        let fx = i as f64 / 5.0;
        let x = ml + fx * pw;
        let y = mt + ph * (1.0 - fx);
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.1}</text>"#,
            mt + ph + 16.0,
            fx
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.1}</text>"#,
            ml - 6.0,
            y + 4.0,
            fx
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x}" y1="{mt}" x2="{x}" y2="{}" stroke="#dddddd"/>"##,
            mt + ph
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">overlap threshold</text>"#,
        ml + pw / 2.0,
        h - 12.0
    );
    for (vi, variant) in Variant::ALL.iter().enumerate() {
        let curve = mean_success_curve(records, *variant);
        let mut points = String::new();
        for (i, v) in curve.iter().enumerate() {
            let x = ml + pw * i as f64 / 100.0;
            let y = mt + ph * (1.0 - v);
            let _ = write!(points, "{x:.1},{y:.1} ");
        }
        let color = CURVE_COLORS[vi];
        let _ = writeln!(
            svg,
            r#"<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>"#
        );
        let ly = mt + 16.0 + 18.0 * vi as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            ml + pw - 110.0,
            ml + pw - 80.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            ml + pw - 74.0,
            ly + 4.0,
            variant.name()
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Predicted boxes, one `x,y,w,h` line per frame (top-left convention).
pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let (x, y) = b.top_left();
        let _ = writeln!(out, "{:.4},{:.4},{:.4},{:.4}", x, y, b.w, b.h);
    }
    out
}

/// Per-frame overlaps, one value per line.
pub fn format_ious(ious: &[f64]) -> String {
    let mut out = String::new();
    for v in ious {
        let _ = writeln!(out, "{v:.6}");
    }
    out
}
