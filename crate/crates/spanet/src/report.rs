//! Run log, metrics and confusion reports, and SVG line charts.

use std::fmt::Write as _;

use spanet_core::metrics::MetricsReport;
use spanet_core::train::EpochRecord;

pub const RUN_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";
pub const METRICS_HEADER: &str = "class,precision,recall,f1,support,accuracy";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One run-log line (no newline). Missing validation values are empty.
pub fn run_row(r: &EpochRecord) -> String {
    format!("{},{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, opt(r.val_loss), opt(r.val_acc))
}

pub fn run_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{RUN_HEADER}\n");
    for r in records {
        s.push_str(&run_row(r));
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per class, then a `macro` row carrying the macro averages, the
/// total support and the overall accuracy.
pub fn metrics_csv(report: &MetricsReport, classes: &[String]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for (name, m) in classes.iter().zip(&report.per_class) {
        let _ = writeln!(s, "{},{},{},{},{},", csv_field(name), m.precision, m.recall, m.f1, m.support);
    }
    let _ = writeln!(
        s,
        "macro,{},{},{},{},{}",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.num_samples(),
        report.accuracy
    );
    s
}

/// Confusion matrix (rows are true classes, columns predictions) followed
/// by the per-class and macro metrics, all column-aligned.
pub fn confusion_text(report: &MetricsReport, classes: &[String]) -> String {
    let n = classes.len();
    let name_w = classes.iter().map(String::len).max().unwrap_or(0).max("true \\ pred".len());
    let cell_w = report
        .confusion
        .iter()
        .flatten()
        .map(|v| v.to_string().len())
        .max()
        .unwrap_or(1)
        .max(3);
    let mut s = String::new();
    let _ = write!(s, "{:<name_w$}", "true \\ pred");
    for j in 0..n {
        let _ = write!(s, " {:>cell_w$}", j);
    }
    s.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        let _ = write!(s, "{:<name_w$}", format!("{i} {}", classes[i]).chars().take(name_w).collect::<String>());
        for v in row {
            let _ = write!(s, " {:>cell_w$}", v);
        }
        s.push('\n');
    }
    s.push('\n');
    let _ = writeln!(s, "{:<name_w$} {:>9} {:>9} {:>9} {:>7}", "class", "precision", "recall", "f1", "support");
    for (name, m) in classes.iter().zip(&report.per_class) {
        let _ = writeln!(s, "{:<name_w$} {:>9.4} {:>9.4} {:>9.4} {:>7}", name, m.precision, m.recall, m.f1, m.support);
    }
    let _ = writeln!(
        s,
        "{:<name_w$} {:>9.4} {:>9.4} {:>9.4} {:>7}",
        "macro",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.num_samples()
    );
    let _ = writeln!(s, "accuracy {:.4}", report.accuracy);
    s
}

/// A named polyline for [`line_chart`].
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal standalone SVG line chart with axes, min/max tick labels and a
/// legend. Non-finite points are skipped.
pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 40.0, 50.0);
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{text}</text>"#);
    };
    label(&mut s, left - 6.0, top + 4.0, "end", format!("{y1:.4}"));
    label(&mut s, left - 6.0, top + ph + 4.0, "end", format!("{y0:.4}"));
    label(&mut s, left, top + ph + 16.0, "middle", format!("{x0}"));
    label(&mut s, left + pw, top + ph + 16.0, "middle", format!("{x1}"));
    label(&mut s, left + pw / 2.0, h - 12.0, "middle", escape(x_label));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(k, &(x, y))| format!("{}{:.2} {:.2}", if k == 0 { 'M' } else { 'L' }, sx(x), sy(y)))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        }
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, left + pw - 120.0, ly - 4.0);
        label(&mut s, left + pw - 102.0, ly, "start", escape(ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Loss and accuracy charts of a run log.
pub fn run_charts(records: &[EpochRecord]) -> (String, String) {
    let series = |f: fn(&EpochRecord) -> Option<f64>| records.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect();
    let loss = line_chart(
        "loss",
        "epoch",
        &[
            Series { name: "train", points: series(|r| Some(r.train_loss)) },
            Series { name: "val", points: series(|r| r.val_loss) },
        ],
    );
    let acc = line_chart(
        "accuracy",
        "epoch",
        &[
            Series { name: "train", points: series(|r| Some(r.train_acc)) },
            Series { name: "val", points: series(|r| r.val_acc) },
        ],
    );
    (loss, acc)
}

/// Per-class precision, recall and F1 drawn over the class index.
pub fn class_chart(report: &MetricsReport) -> String {
    let series = |f: fn(&spanet_core::metrics::ClassMetrics) -> f64| {
        report.per_class.iter().enumerate().map(|(i, m)| (i as f64, f(m))).collect()
    };
    line_chart(
        "per-class metrics",
        "class id",
        &[
            Series { name: "precision", points: series(|m| m.precision) },
            Series { name: "recall", points: series(|m| m.recall) },
            Series { name: "f1", points: series(|m| m.f1) },
        ],
    )
}
