use std::fmt::Write;

use super::ReportError;
use crate::metrics::{curve_auc, PrCurve};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct NamedCurve {
    pub name: String,
    pub curve: PrCurve,
}

pub struct LatencyAucPoint {
    pub name: String,
    pub latency_ms: f64,
    pub pr_auc: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x_min: f64,
    x_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - y * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[f64], x_label: &str, y_label: &str) {
    let (x0, x1) = (f.px(f.x_min), f.px(f.x_max));
    let (y0, y1) = (f.py(0.0), f.py(1.0));
    let _ = writeln!(out, r##"<g stroke="#cccccc" stroke-width="0.5">"##);
    for i in 0..=5 {
        let y = f.py(i as f64 / 5.0);
        let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}"/>"#);
    }
    for &t in x_ticks {
        let x = f.px(t);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}"/>"#);
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            f.py(v) + 4.0
        );
    }
    for &t in x_ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(t),
            y0 + 16.0,
            trim_number(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    let x = WIDTH - RIGHT + 12.0;
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 14.0 + i as f64 * 18.0;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            y - 10.0,
            x + 18.0,
            y,
            escape(label)
        );
    }
}

/// Precision (y) against recall (x), one polyline per curve, with the
/// trapezoidal PR-AUC in each legend entry.
pub fn pr_curves_svg(curves: &[NamedCurve]) -> Result<String, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::Empty);
    }
    let frame = Frame { x_min: 0.0, x_max: 1.0 };
    let mut out = String::new();
    header(&mut out, "Precision-recall, nonempty class");
    axes(&mut out, &frame, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], "Recall", "Precision");
    let mut entries = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.px(p.recall), frame.py(p.precision)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        entries.push((format!("{} (PR-AUC {:.3})", c.name, curve_auc(&c.curve)), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for step in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if step * mag >= v {
            return step * mag;
        }
    }
    10.0 * mag
}

/// Latency (x, milliseconds) against PR-AUC (y), one marker per model.
pub fn latency_auc_svg(points: &[LatencyAucPoint]) -> Result<String, ReportError> {
    if points.is_empty() {
        return Err(ReportError::Empty);
    }
    let max_latency = points.iter().map(|p| p.latency_ms).fold(0.0, f64::max);
    let frame = Frame {
        x_min: 0.0,
        x_max: nice_max(max_latency * 1.05),
    };
    let ticks: Vec<f64> = (0..=5).map(|i| frame.x_max * i as f64 / 5.0).collect();
    let mut out = String::new();
    header(&mut out, "Latency vs. PR-AUC");
    axes(&mut out, &frame, &ticks, "Latency (ms)", "PR-AUC");
    let mut entries = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{color}"/>"#,
            frame.px(p.latency_ms),
            frame.py(p.pr_auc.clamp(0.0, 1.0))
        );
        entries.push((
            format!("{} ({:.0} ms, {:.3})", p.name, p.latency_ms, p.pr_auc),
            color,
        ));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}
