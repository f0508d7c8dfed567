use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::RocPoint;
use super::run::{ExperimentReport, MetricRow};
use crate::classifiers::ClassifierMode;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const ROC_PLOT: &str = "roc.svg";

fn num(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn mode_name(m: ClassifierMode) -> &'static str {
    match m {
        ClassifierMode::Closed => "closed",
        ClassifierMode::Open => "open",
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// `metrics.csv`: one row per (seed, method), then a `mean` row per method.
pub fn metrics_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "method", "mode", "accuracy", "auc", "false_alarm", "runtime_s"]).map_err(csv_err)?;
    let row = |w: &mut csv::Writer<Vec<u8>>, r: &MetricRow| {
        w.write_record([
            r.seed.to_string(),
            r.method.to_string(),
            mode_name(r.mode).to_string(),
            num(r.accuracy),
            num(r.auc),
            num(r.false_alarm),
            format!("{:.3}", r.runtime_s),
        ])
    };
    for r in &report.rows {
        row(&mut w, r).map_err(csv_err)?;
    }
    for s in &report.summaries {
        let runtimes: Vec<f64> =
            report.rows.iter().filter(|r| r.method == s.method && r.error.is_none()).map(|r| r.runtime_s).collect();
        let mean_rt = if runtimes.is_empty() { 0.0 } else { runtimes.iter().sum::<f64>() / runtimes.len() as f64 };
        w.write_record([
            "mean".to_string(),
            s.method.to_string(),
            mode_name(report.plan.mode).to_string(),
            num(s.accuracy.as_ref().map(|v| v.mean)),
            num(s.auc.as_ref().map(|v| v.mean)),
            num(s.false_alarm.as_ref().map(|v| v.mean)),
            format!("{mean_rt:.3}"),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// `threshold,fpr,tpr`; a sample is rejected when its score is at or above the threshold.
pub fn roc_csv(points: &[RocPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"]).map_err(csv_err)?;
    for p in points {
        let t = if p.threshold.is_finite() { format!("{:.6}", p.threshold) } else { "inf".into() };
        w.write_record([t, format!("{:.6}", p.fpr), format!("{:.6}", p.tpr)]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = y0 - v * (y0 - y1);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, x0 - 4.0, y + 4.0);
    }
    s
}

/// Mean accuracy per method with a ±1 std whisker.
pub fn accuracy_svg(report: &ExperimentReport) -> String {
    let mut s = svg_open("Mean closed-set accuracy (test receivers)");
    let n = report.summaries.len().max(1) as f64;
    let (x0, y0, y1) = (PAD, H - PAD, PAD);
    let span = W - PAD * 1.5;
    let y = |v: f64| y0 - v.clamp(0.0, 1.0) * (y0 - y1);
    for (i, sm) in report.summaries.iter().enumerate() {
        let slot = span / n;
        let cx = x0 + slot * (i as f64 + 0.5);
        let bw = slot * 0.6;
        if let Some(a) = &sm.accuracy {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                cx - bw / 2.0,
                y(a.mean),
                y0 - y(a.mean),
                COLORS[i % COLORS.len()]
            );
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1} {:.1} L{cx:.1} {:.1}" stroke="black"/>"#,
                y(a.mean - a.std),
                y(a.mean + a.std)
            );
            let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, y(a.mean) - 4.0, a.mean);
        }
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 16.0, sm.method);
    }
    s.push_str("</svg>\n");
    s
}

/// ROC curves of all methods in one plot.
pub fn roc_svg(report: &ExperimentReport) -> String {
    let mut s = svg_open("Outlier detection ROC (pooled seeds)");
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    let px = |v: f64| x0 + v * (x1 - x0);
    let py = |v: f64| y0 - v * (y0 - y1);
    let _ = writeln!(
        s,
        r##"<path d="M{:.1} {:.1} L{:.1} {:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, (name, pts)) in report.roc.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{}{:.1} {:.1}", if k == 0 { "M" } else { "L" }, px(p.fpr), py(p.tpr)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.join(" "));
        let auc = report.summary(name.parse().unwrap_or(super::plan::Method::Naive)).and_then(|m| m.auc.as_ref());
        let label = match auc {
            Some(a) => format!("{name} (AUC {:.3})", a.mean),
            None => name.clone(),
        };
        let ly = y1 + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{label}</text>"#, x1 - 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">false alarm rate</text>"#, (x0 + x1) / 2.0, H - 12.0);
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics.csv`, `report.json`, `accuracy.svg` and, in open mode,
/// the ROC points (`roc.csv` for a single method, `roc_<method>.csv`
/// otherwise) with `roc.svg`. Returns the written paths. Output depends only
/// on the report.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put(METRICS_FILE.into(), metrics_csv(report)?)?;
    put(REPORT_FILE.into(), (serde_json::to_string_pretty(report)? + "\n").into_bytes())?;
    put(ACCURACY_PLOT.into(), accuracy_svg(report).into_bytes())?;
    if !report.roc.is_empty() {
        let single = report.roc.len() == 1;
        for (m, pts) in &report.roc {
            let name = if single { "roc.csv".to_string() } else { format!("roc_{m}.csv") };
            put(name, roc_csv(pts)?)?;
        }
        put(ROC_PLOT.into(), roc_svg(report).into_bytes())?;
    }
    Ok(written)
}
