//! CSV tables, SVG line plots and text confusion tables.
//!
//! Everything here is a pure function of its inputs; identical inputs give
//! byte-identical documents.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{summarize, ClassAp, ConfusionCounts, MetricsRow, PrPoint};
use crate::pipeline::BenchRow;
use crate::trainer::TrainRecord;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];
const TICKS: usize = 5;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub x_label: String,
    pub y_label: String,
}

impl PlotSeries {
    pub fn new(
        name: impl Into<String>,
        points: Vec<(f64, f64)>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        PlotSeries {
            name: name.into(),
            points,
            x_label: x_label.into(),
            y_label: y_label.into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders series as polylines over the given data ranges. Axis labels come
/// from the first series. Points outside the ranges are clamped onto the
/// frame and counted in a leading comment.
pub fn render_svg(
    series: &[PlotSeries],
    x_range: (f64, f64),
    y_range: (f64, f64),
    size: (u32, u32),
) -> Result<String> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to plot".into()))?;
    for (lo, hi) in [x_range, y_range] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "invalid plot range [{lo}, {hi}]"
            )));
        }
    }
    if let Some(s) = series.iter().find(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "series {:?} has no points",
            s.name
        )));
    }
    if let Some(s) = series.iter().find(|s| {
        s.points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
    }) {
        return Err(Error::InvalidArgument(format!(
            "series {:?} has a non-finite point",
            s.name
        )));
    }

    let (w, h) = (size.0 as f64, size.1 as f64);
    let plot_w = (w - MARGIN_LEFT - MARGIN_RIGHT).max(1.0);
    let plot_h = (h - MARGIN_TOP - MARGIN_BOTTOM).max(1.0);
    let to_px = |x: f64, y: f64| {
        let fx = (x - x_range.0) / (x_range.1 - x_range.0);
        let fy = (y - y_range.0) / (y_range.1 - y_range.0);
        (MARGIN_LEFT + fx * plot_w, MARGIN_TOP + (1.0 - fy) * plot_h)
    };

    let mut clamped = 0usize;
    let mut lines = Vec::with_capacity(series.len());
    for s in series {
        let mut coords = Vec::with_capacity(s.points.len());
        for &(x, y) in &s.points {
            let cx = x.clamp(x_range.0, x_range.1);
            let cy = y.clamp(y_range.0, y_range.1);
            if cx != x || cy != y {
                clamped += 1;
            }
            let (px, py) = to_px(cx, cy);
            coords.push(format!("{px:.2},{py:.2}"));
        }
        lines.push(coords.join(" "));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        size.0, size.1, size.0, size.1
    );
    let _ = writeln!(svg, "<!-- clamped points: {clamped} -->");
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        size.0, size.1
    );
    let (x0, y0) = to_px(x_range.0, y_range.0);
    let (x1, y1) = to_px(x_range.1, y_range.1);
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let yv = y_range.0 + f * (y_range.1 - y_range.0);
        let (tx, _) = to_px(xv, y_range.0);
        let (_, ty) = to_px(x_range.0, yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{tx:.2}" y1="{y0:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ty:.2}" x2="{x0:.2}" y2="{ty:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            ty + 3.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        h - 10.0,
        escape(&first.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&first.y_label)
    );
    for (i, (s, coords)) in series.iter().zip(&lines).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>"#
        );
        let ly = MARGIN_TOP + 10.0 + 16.0 * i as f64;
        let lx = w - MARGIN_RIGHT - 120.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            lx + 20.0,
            ly + 3.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Formats with `digits` significant digits, switching to exponent form for
/// very large or small magnitudes.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// Two decimals for thresholds on the 0.01 grid, six otherwise.
fn fmt_threshold(v: f64) -> String {
    if ((v * 100.0).round() - v * 100.0).abs() < 1e-9 {
        format!("{v:.2}")
    } else {
        format!("{v:.6}")
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iou_threshold,precision,recall,f1,map\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            fmt_threshold(r.iou_threshold),
            r.precision,
            r.recall,
            r.f1,
            r.map_value
        );
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall);
    }
    out
}

pub fn class_ap_csv(rows: &[ClassAp], class_names: &[String]) -> String {
    let mut out = String::from("iou_threshold,class_id,class_name,num_gt,ap\n");
    for r in rows {
        let name = class_names
            .get(r.class_id)
            .map(String::as_str)
            .unwrap_or("");
        let ap = r.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_threshold(r.iou_threshold),
            r.class_id,
            csv_field(name),
            r.num_gt,
            ap
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn train_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            fmt_sig(r.train_loss, 9),
            fmt_sig(r.val_loss, 9),
            fmt_sig(r.learning_rate_used, 9)
        );
    }
    out
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("width,height,iterations,mean_ms,p50_ms,p95_ms,fps\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.2}",
            r.width, r.height, r.iterations, r.mean_ms, r.p50_ms, r.p95_ms, r.fps
        );
    }
    out
}

/// PR curve plot over `[0, 1]^2` with recall on x.
pub fn pr_svg(points: &[PrPoint]) -> Result<String> {
    let pts = if points.is_empty() {
        vec![(0.0, 0.0)]
    } else {
        points.iter().map(|p| (p.recall, p.precision)).collect()
    };
    render_svg(
        &[PlotSeries::new(
            "precision-recall",
            pts,
            "recall",
            "precision",
        )],
        (0.0, 1.0),
        (0.0, 1.0),
        (480, 360),
    )
}

/// Training and validation loss against epoch.
pub fn loss_svg(records: &[TrainRecord]) -> Result<String> {
    let train: Vec<_> = records
        .iter()
        .map(|r| (r.epoch as f64, r.train_loss))
        .collect();
    let val: Vec<_> = records
        .iter()
        .map(|r| (r.epoch as f64, r.val_loss))
        .collect();
    let x_max = records.last().map_or(1.0, |r| r.epoch.max(1) as f64);
    let y_max = train.iter().chain(&val).map(|p| p.1).fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    render_svg(
        &[
            PlotSeries::new("train", train, "epoch", "loss"),
            PlotSeries::new("validation", val, "epoch", "loss"),
        ],
        (0.0, x_max),
        (0.0, y_max),
        (480, 360),
    )
}

/// 2x2 table with true labels as rows and predictions as columns, positive
/// class first, followed by the derived metrics.
pub fn render_confusion_table(c: &ConfusionCounts, class_names: [&str; 2]) -> String {
    let [pos, neg] = class_names;
    let cells = [
        [c.tp.to_string(), c.fn_.to_string()],
        [c.fp.to_string(), c.tn.to_string()],
    ];
    let label_w = ["true \\ predicted", pos, neg]
        .iter()
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0);
    let col_w = cells
        .iter()
        .flatten()
        .map(String::len)
        .chain([pos.chars().count(), neg.chars().count()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_w$}  {:>col_w$}  {:>col_w$}",
        "true \\ predicted", pos, neg
    );
    for (name, row) in [pos, neg].iter().zip(&cells) {
        let _ = writeln!(
            out,
            "{:<label_w$}  {:>col_w$}  {:>col_w$}",
            name, row[0], row[1]
        );
    }
    out.push('\n');
    let s = summarize(c);
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
    let defined = |den: u64, v: f64| (den > 0).then_some(v);
    let _ = writeln!(out, "accuracy  {}", fmt(s.accuracy));
    let _ = writeln!(out, "precision {}", fmt(defined(c.tp + c.fp, s.precision)));
    let _ = writeln!(out, "recall    {}", fmt(defined(c.tp + c.fn_, s.recall)));
    let _ = writeln!(
        out,
        "f1        {}",
        fmt((c.tp + c.fp > 0 && c.tp + c.fn_ > 0).then_some(s.f1))
    );
    out
}
