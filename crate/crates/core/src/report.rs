//! Report files for a regime run, comparison tables and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::eval::{EvalError, RunReport};
use crate::featsel::RelevanceReport;
use crate::regimes::ForecastRecord;
use crate::series::fmt_ts;

pub const SCORES_FILE: &str = "scores.csv";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLOT_FILE: &str = "best_worst.svg";

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

/// `week,mae,rmse`.
pub fn scores_csv(report: &RunReport) -> String {
    let mut out = String::from("week,mae,rmse\n");
    for w in &report.windows {
        let _ = writeln!(out, "{},{},{}", w.week, w.mae, w.rmse);
    }
    out
}

/// `timestamp,week,hour,actual,base_pred,corrected_pred,bias`, one row per
/// forecast hour.
pub fn forecasts_csv(records: &[ForecastRecord]) -> String {
    let mut out = String::from("timestamp,week,hour,actual,base_pred,corrected_pred,bias\n");
    for r in records {
        for h in 0..r.actual.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_ts(r.timestamps[h]),
                r.week,
                h,
                r.actual[h],
                r.base_pred[h],
                r.corrected_pred[h],
                r.bias
            );
        }
    }
    out
}

pub fn manifest_json(report: &RunReport, config: &Value) -> Value {
    json!({
        "model": report.model,
        "regime": report.regime,
        "partial": report.partial,
        "failed_week": report.failed_week,
        "failure": report.failure,
        "planned_windows": report.planned_windows,
        "completed_windows": report.windows.len(),
        "fits": report.fits,
        "aggregate": report.aggregate,
        "base_aggregate": report.base_aggregate,
        "elapsed_seconds": report.elapsed_seconds,
        "config": config,
    })
}

/// Writes scores, forecasts, manifest and the best/worst plot into
/// `out_dir`, creating it when missing.
pub fn emit_report(
    report: &RunReport,
    records: &[ForecastRecord],
    out_dir: &Path,
    config: &Value,
) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(out_dir)?;
    let manifest = serde_json::to_string_pretty(&manifest_json(report, config))
        .map_err(|e| EvalError::Io(e.to_string()))?;
    let files = [
        (SCORES_FILE, scores_csv(report)),
        (FORECASTS_FILE, forecasts_csv(records)),
        (MANIFEST_FILE, manifest + "\n"),
        (PLOT_FILE, best_worst_svg(report, records)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

struct Panel<'a> {
    title: String,
    series: Vec<(&'a str, &'a str, &'a [f64])>,
}

fn polyline(values: &[f64], x0: f64, y0: f64, w: f64, h: f64, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let dx = if values.len() > 1 {
        w / (values.len() - 1) as f64
    } else {
        0.0
    };
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = x0 + dx * i as f64;
        let y = y0 + h - (v - lo) / span * h;
        let _ = write!(pts, "{x:.2},{y:.2} ");
    }
    pts.trim_end().to_string()
}

fn panels_svg(panels: &[Panel]) -> String {
    let (width, panel_h, margin) = (900.0, 260.0, 50.0);
    let height = panel_h * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        let top = panel_h * k as f64;
        let (x0, y0) = (margin, top + 30.0);
        let (w, h) = (width - 2.0 * margin, panel_h - 70.0);
        let all = p.series.iter().flat_map(|(_, _, v)| v.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let _ = writeln!(
            s,
            r#"<text x="{x0}" y="{}" font-weight="bold">{}</text>"#,
            top + 18.0,
            p.title
        );
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(s, r#"<text x="5" y="{:.2}">{hi:.1}</text>"#, y0 + 10.0);
        let _ = writeln!(s, r#"<text x="5" y="{:.2}">{lo:.1}</text>"#, y0 + h);
        for tick in (0..=168).step_by(24) {
            let x = x0 + w * tick as f64 / 168.0;
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"#,
                y0 + h + 15.0
            );
        }
        for (i, (label, color, values)) in p.series.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                polyline(values, x0, y0, w, h, lo, hi)
            );
            let lx = x0 + w - 220.0 + 110.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{lx:.2}" y="{}" fill="{color}">{label}</text>"#,
                top + 18.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">hour of week</text>"#,
        width / 2.0,
        height - 5.0
    );
    s.push_str("</svg>\n");
    s
}

/// Two panels, best week above worst week: actual vs. deployed forecast.
pub fn best_worst_svg(report: &RunReport, records: &[ForecastRecord]) -> String {
    let panels: Vec<Panel> = [
        ("Best", report.aggregate.best_week),
        ("Worst", report.aggregate.worst_week),
    ]
    .into_iter()
    .filter_map(|(label, week)| {
        let r = records.iter().find(|r| r.week == week)?;
        let mae = report.window(week).map_or(f64::NAN, |w| w.mae);
        Some(Panel {
            title: format!(
                "{label} week {week} ({} / {}, MAE {mae:.2})",
                report.model, report.regime
            ),
            series: vec![
                ("actual", "#1f4e79", r.actual.as_slice()),
                ("forecast", "#c0392b", r.corrected_pred.as_slice()),
            ],
        })
    })
    .collect();
    panels_svg(&panels)
}

/// Horizontal bars of mutual information per candidate in ranking order.
pub fn relevance_svg(report: &RelevanceReport) -> String {
    let row_h = 24.0;
    let (label_w, bar_w) = (120.0, 520.0);
    let height = 40.0 + row_h * report.ranking.len() as f64;
    let max = report
        .mi
        .values()
        .fold(0.0f64, |a, v| a.max(*v))
        .max(f64::MIN_POSITIVE);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="10" y="18" font-weight="bold">Mutual information with target (nats)</text>
"#,
        label_w + bar_w + 120.0
    );
    for (i, name) in report.ranking.iter().enumerate() {
        let mi = report.mi.get(name).copied().unwrap_or(0.0);
        let r = report.pearson.get(name).copied().unwrap_or(0.0);
        let y = 30.0 + row_h * i as f64;
        let w = bar_w * mi / max;
        let _ = writeln!(s, r#"<text x="10" y="{:.1}">{name}</text>"#, y + 15.0);
        let _ = writeln!(
            s,
            r##"<rect x="{label_w}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="#2e86c1"/>"##,
            row_h - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}">{mi:.3} (r={r:.2})</text>"#,
            label_w + w + 6.0,
            y + 15.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One cell of a model x regime comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub regime: String,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub base_mae: Option<f64>,
    pub base_rmse: Option<f64>,
    pub windows: usize,
    pub planned_windows: usize,
    pub partial: bool,
    pub seconds: f64,
    pub note: String,
}

impl ComparisonRow {
    pub fn from_report(r: &RunReport) -> Self {
        Self {
            model: r.model.clone(),
            regime: r.regime.clone(),
            mae: Some(r.aggregate.mae),
            rmse: Some(r.aggregate.rmse),
            base_mae: Some(r.base_aggregate.mae),
            base_rmse: Some(r.base_aggregate.rmse),
            windows: r.windows.len(),
            planned_windows: r.planned_windows,
            partial: r.partial,
            seconds: r.elapsed_seconds,
            note: r.failure.clone().unwrap_or_default(),
        }
    }

    pub fn failed(model: &str, regime: &str, planned: usize, note: String) -> Self {
        Self {
            model: model.into(),
            regime: regime.into(),
            mae: None,
            rmse: None,
            base_mae: None,
            base_rmse: None,
            windows: 0,
            planned_windows: planned,
            partial: true,
            seconds: 0.0,
            note,
        }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "model,regime,mae,rmse,base_mae,base_rmse,windows,planned_windows,partial,seconds,note\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{}",
            r.model,
            r.regime,
            opt(r.mae, 4),
            opt(r.rmse, 4),
            opt(r.base_mae, 4),
            opt(r.base_rmse, 4),
            r.windows,
            r.planned_windows,
            r.partial,
            r.seconds,
            csv_field(&r.note)
        );
    }
    out
}

/// Markdown table in model-major order.
pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "| Model | Regime | MAE | RMSE | Base MAE | Base RMSE | Windows | Time (s) |\n|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let windows = if r.partial {
            format!("{}/{} (partial)", r.windows, r.planned_windows)
        } else {
            format!("{}/{}", r.windows, r.planned_windows)
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {:.1} |",
            r.model,
            r.regime,
            opt(r.mae, 2),
            opt(r.rmse, 2),
            opt(r.base_mae, 2),
            opt(r.base_rmse, 2),
            windows,
            r.seconds
        );
    }
    out
}

/// Reference numbers for side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub regime: String,
    pub mae: f64,
    pub rmse: f64,
}

/// Parses `model,regime,mae,rmse` with a header row.
pub fn parse_reference_csv(text: &str) -> Result<Vec<ReferenceRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| EvalError::Io(format!("reference csv: {e}"))))
        .collect()
}

/// Relative deviation of ours from the reference; informational only.
pub fn reference_csv(rows: &[ComparisonRow], refs: &[ReferenceRow], band: f64) -> String {
    let mut out = String::from(
        "model,regime,mae,ref_mae,mae_rel_diff,rmse,ref_rmse,rmse_rel_diff,within_band\n",
    );
    for rf in refs {
        let Some(ours) = rows
            .iter()
            .find(|r| r.model == rf.model && r.regime == rf.regime)
        else {
            continue;
        };
        let rel = |a: Option<f64>, b: f64| a.map(|a| (a - b) / b);
        let dm = rel(ours.mae, rf.mae);
        let dr = rel(ours.rmse, rf.rmse);
        let within = matches!((dm, dr), (Some(m), Some(r)) if m.abs() <= band && r.abs() <= band);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            rf.model,
            rf.regime,
            opt(ours.mae, 4),
            rf.mae,
            opt(dm, 4),
            opt(ours.rmse, 4),
            rf.rmse,
            opt(dr, 4),
            within
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_band_is_symmetric() {
        let row = ComparisonRow {
            model: "additive".into(),
            regime: "walkforward".into(),
            mae: Some(45.0),
            rmse: Some(50.0),
            base_mae: None,
            base_rmse: None,
            windows: 1,
            planned_windows: 1,
            partial: false,
            seconds: 0.0,
            note: String::new(),
        };
        let refs = parse_reference_csv("model,regime,mae,rmse\nadditive,walkforward,37.61,50.10\n")
            .unwrap();
        let out = reference_csv(&[row], &refs, 0.25);
        assert!(out.lines().nth(1).unwrap().ends_with(",true"));
    }

    #[test]
    fn notes_with_commas_are_quoted() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
