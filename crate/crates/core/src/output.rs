//! CSV, SVG and JSON artifact writers.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::ode::Trajectory;

/// Shortest decimal form that parses back to the same `f64`; at most 17
/// significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Trajectory as CSV with header `t,<prefix>_1,...,<prefix>_n`.
pub fn trajectory_csv(traj: &Trajectory, prefix: &str) -> String {
    let n = traj.states.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",{prefix}_{i}");
    }
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&fmt_f64(*t));
        for v in s {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a trajectory CSV written by [`trajectory_csv`].
pub fn parse_trajectory_csv(text: &str) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    lines.next()?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for line in lines {
        let mut fields = line.split(',').map(|f| f.parse::<f64>());
        times.push(fields.next()?.ok()?);
        states.push(fields.collect::<Result<Vec<_>, _>>().ok()?);
    }
    Some((times, states))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Minimal line chart: one polyline per state component against time.
pub fn line_chart_svg(traj: &Trajectory, title: &str, label: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 110.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;

    let n = traj.states.first().map_or(0, Vec::len);
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let t1 = traj.times.last().copied().unwrap_or(1.0);
    let (mut lo, mut hi) = traj
        .states
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
    let px = |t: f64| LEFT + (t - t0) / span_t * (W - LEFT - RIGHT);
    let py = |v: f64| TOP + (hi - v) / (hi - lo) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let t = t0 + f * span_t;
        let v = lo + f * (hi - lo);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(t),
            y1 + 18.0,
            tick(t)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            py(v) + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">t</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0
    );
    for i in 0..n {
        let colour = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let _ = write!(points, "{:.2},{:.2} ", px(*t), py(s[i]));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            points.trim_end()
        );
        let ly = TOP + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#,
            x1 + 12.0,
            x1 + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}_{}</text>"#,
            x1 + 38.0,
            ly + 4.0,
            escape(label),
            i + 1
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
