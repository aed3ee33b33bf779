use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentReport, Summary};
use crate::error::{Error, Result};
use crate::fs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            _ => Err(Error::domain(format!("unknown report format {s:?}"))),
        }
    }
}

/// Per-fold metrics written to the CSV, in column order.
pub const CSV_METRICS: [&str; 8] = [
    "f1",
    "precision",
    "recall",
    "accuracy",
    "iou",
    "random_iou",
    "attention_bline",
    "attention_non_bline",
];

fn metric(s: &Summary, name: &str) -> Option<f64> {
    match name {
        "f1" => Some(s.f1),
        "precision" => Some(s.precision),
        "recall" => Some(s.recall),
        "accuracy" => Some(s.accuracy),
        "iou" => s.iou,
        "random_iou" => s.random_iou,
        "attention_bline" => s.attention_bline,
        "attention_non_bline" => s.attention_non_bline,
        _ => None,
    }
}

/// One row per (configuration, fold, metric). Undefined values are empty.
pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("config,fold,metric,value\n");
    for arm in &report.arms {
        for f in &arm.folds {
            for m in CSV_METRICS {
                let v = metric(&f.summary, m).map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{}", arm.label, f.fold, m, v);
            }
        }
    }
    out
}

pub fn to_json(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<ExperimentReport> {
    serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar chart of mean F1 per configuration, in sweep order, with one dot per
/// fold.
pub fn to_svg(report: &ExperimentReport) -> String {
    let (group_w, left, top, plot_h) = (90.0, 50.0, 30.0, 240.0);
    let width = left + group_w * report.arms.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 60.0;
    let y = |f1: f64| top + plot_h * (1.0 - f1.clamp(0.0, 100.0) / 100.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18">F1 (%) per configuration, {} folds</text>"#, report.folds);
    for tick in [0, 25, 50, 75, 100] {
        let ty = y(f64::from(tick));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#ddd"/><text x="{:.0}" y="{:.2}" text-anchor="end">{tick}</text>"##,
            width - 20.0,
            left - 6.0,
            ty + 4.0
        );
    }
    for (i, arm) in report.arms.iter().enumerate() {
        let x0 = left + group_w * i as f64 + 15.0;
        let bw = group_w - 30.0;
        let _ = writeln!(s, r#"<g class="config" data-config="{}">"#, escape(&arm.label));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="{}"/>"##,
            y(arm.mean_f1),
            top + plot_h - y(arm.mean_f1),
            if arm.representation == crate::synthgen::Representation::Polar {
                "#4c78a8"
            } else {
                "#f58518"
            }
        );
        let n = arm.folds.len().max(1) as f64;
        for (k, f) in arm.folds.iter().enumerate() {
            let cx = x0 + bw * (k as f64 + 0.5) / n;
            let _ = writeln!(
                s,
                r##"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="#222"><title>fold {k}: {:.2}</title></circle>"##,
                y(f.summary.f1),
                f.summary.f1
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + bw / 2.0,
            top + plot_h + 16.0,
            escape(&arm.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.1}</text>"#,
            x0 + bw / 2.0,
            top + plot_h + 32.0,
            arm.mean_f1
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

pub fn render(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Svg => to_svg(report),
    })
}

/// Writes `report` to `path` atomically.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    fs::write_atomic(path, render(report, format)?.as_bytes())
}
