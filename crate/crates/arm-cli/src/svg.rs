//! Hand-rolled SVG charts for run directories. The CSVs next to them
//! are the authoritative record; these exist so a run can be eyeballed
//! without firing up a plotting stack.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::CliResult;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

/// One polyline. Emphasized series draw thick and dark; the rest thin
/// and gray (useful for a mean over faint per-domain curves).
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    pub emphasis: bool,
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps data coordinates to pixels within the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - MARGIN_L - MARGIN_R;
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0).max(f64::EPSILON) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_T - MARGIN_B;
        // SVG y grows downward.
        MARGIN_T + (self.y1 - y) / (self.y1 - self.y0).max(f64::EPSILON) * h
    }

    /// Axes with five ticks per side.
    fn axes(&self, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let (bx, by) = (self.px(self.x0), self.py(self.y0));
        let (tx, ty) = (self.px(self.x1), self.py(self.y1));
        let _ = writeln!(
            s,
            r#"<path d="M {bx} {ty} L {bx} {by} L {tx} {by}" stroke="black" fill="none"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let x = self.x0 + f * (self.x1 - self.x0);
            let y = self.y0 + f * (self.y1 - self.y0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                self.px(x),
                by + 16.0,
                trim_num(x)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
                bx - 6.0,
                self.py(y) + 4.0,
                trim_num(y)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{bx}" y1="{}" x2="{tx}" y2="{}" stroke="#ddd"/>"##,
                self.py(y),
                self.py(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            (bx + tx) / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (by + ty) / 2.0,
            (by + ty) / 2.0,
            escape(y_label)
        );
        s
    }
}

fn trim_num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e6 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

/// A line chart over the given series, with an optional dashed horizontal
/// reference level (e.g. the all-at-once batch accuracy).
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    reference: Option<(f64, &str)>,
) -> CliResult<()> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let xs = pts.clone().map(|p| p.0);
    let ys = pts.map(|p| p.1).chain(reference.iter().map(|r| r.0));
    let frame = Frame {
        x0: xs.clone().fold(f64::INFINITY, f64::min).min(0.0),
        x1: xs.fold(f64::NEG_INFINITY, f64::max).max(1.0),
        y0: (ys.clone().fold(f64::INFINITY, f64::min) - 0.02).max(0.0),
        y1: (ys.fold(f64::NEG_INFINITY, f64::max) + 0.02).min(1.0),
    };

    let mut s = header(title);
    s.push_str(&frame.axes(x_label, y_label));
    if let Some((level, label)) = reference {
        let y = frame.py(level);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#c33" stroke-dasharray="6 4"/>"##,
            frame.px(frame.x0),
            frame.px(frame.x1)
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" font-size="11" fill="#c33" text-anchor="end">{}</text>"##,
            frame.px(frame.x1) - 4.0,
            y - 5.0,
            escape(label)
        );
    }
    for sr in series {
        if sr.points.is_empty() {
            continue;
        }
        let d: Vec<String> = sr
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let (stroke, width, opacity) =
            if sr.emphasis { ("#135", "2.5", "1.0") } else { ("#999", "1.0", "0.6") };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" opacity="{opacity}"><title>{}</title></polyline>"#,
            d.join(" "),
            escape(sr.label)
        );
    }
    s.push_str("</svg>\n");
    fs::write(path, s).with_context(|| format!("writing `{}`", path.display()))?;
    Ok(())
}

/// A bar chart with one labeled bar per category (per-domain accuracy).
pub fn bar_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    labels: &[String],
    values: &[f64],
) -> CliResult<()> {
    let frame = Frame {
        x0: 0.0,
        x1: labels.len().max(1) as f64,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = header(title);
    s.push_str(&frame.axes("", y_label));
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / labels.len().max(1) as f64;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = frame.px(i as f64) + slot * 0.15;
        let y = frame.py(v);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#357"><title>{} = {v:.4}</title></rect>"##,
            slot * 0.7,
            frame.py(0.0) - y,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="9" text-anchor="middle">{}</text>"#,
            frame.px(i as f64 + 0.5),
            frame.py(0.0) + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    fs::write(path, s).with_context(|| format!("writing `{}`", path.display()))?;
    Ok(())
}
