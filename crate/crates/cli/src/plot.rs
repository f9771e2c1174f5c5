//! Static SVG charts.

use std::fmt::Write;

use crate::experiment::{RunResult, WidthRow};
use crate::output::{by_policy, mean_stderr};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A named line with an optional symmetric band.
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub band: Option<Vec<f64>>,
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
    log_y: bool,
}

fn scale(v: f64, lo: f64, hi: f64, log: bool) -> f64 {
    let (v, lo, hi) = if log { (v.log10(), lo.log10(), hi.log10()) } else { (v, lo, hi) };
    let span = if hi > lo { hi - lo } else { 1.0 };
    (v - lo) / span
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + scale(x, self.x0, self.x1, self.log_x) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - scale(y, self.y0, self.y1, self.log_y) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Step from {1, 2, 5}·10^k giving about five intervals over `span`.
fn nice_step(span: f64) -> f64 {
    let raw = (span / 5.0).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn linear_ticks(lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

fn decade_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.log10().ceil() as i32, (hi.log10() + 1e-9).floor() as i32);
    (a..=b).map(|e| 10f64.powi(e)).collect()
}

fn fmt_linear(v: f64, step: f64) -> String {
    let digits = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.digits$}")
}

fn fmt_decade(v: f64) -> String {
    let e = v.log10().round() as i32;
    if (-3..=4).contains(&e) {
        format!("{v}")
    } else {
        format!("1e{e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn points(ax: &Axes, x: &[f64], y: &[f64]) -> String {
    x.iter().zip(y).map(|(a, b)| format!("{:.2},{:.2}", ax.px(*a), ax.py(*b))).collect::<Vec<_>>().join(" ")
}

/// Renders a line chart with a legend on the right.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool, log_y: bool) -> String {
    let all_x = series.iter().flat_map(|s| s.x.iter().copied());
    let (mut x0, mut x1) = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        (x0, x1) = (if log_x { 1.0 } else { 0.0 }, 1.0);
    }
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for s in series {
        for (k, &v) in s.y.iter().enumerate() {
            let e = s.band.as_ref().map_or(0.0, |b| b[k]);
            y0 = y0.min(v - e);
            y1 = y1.max(v + e);
        }
    }
    if !y0.is_finite() {
        (y0, y1) = (if log_y { 1.0 } else { 0.0 }, 1.0);
    }
    let (y_ticks, y_labels): (Vec<f64>, Vec<String>) = if log_y {
        y0 = 10f64.powf(y0.max(f64::MIN_POSITIVE).log10().floor());
        y1 = 10f64.powf(y1.log10().ceil()).max(y0 * 10.0);
        let t = decade_ticks(y0, y1);
        let l = t.iter().map(|v| fmt_decade(*v)).collect();
        (t, l)
    } else {
        y0 = y0.min(0.0);
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let step = nice_step(y1 - y0);
        y1 = (y1 / step).ceil() * step;
        y0 = (y0 / step).floor() * step;
        let (t, step) = linear_ticks(y0, y1);
        let l = t.iter().map(|v| fmt_linear(*v, step)).collect();
        (t, l)
    };
    let ax = Axes { x0, x1, y0, y1, log_x, log_y };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    let (bx0, bx1, by0, by1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{bx0}" y="{by0}" width="{}" height="{}" fill="none" stroke="black"/>"#, bx1 - bx0, by1 - by0);

    for (v, label) in y_ticks.iter().zip(&y_labels) {
        let y = ax.py(*v);
        let _ = writeln!(
            svg,
            r##"<line x1="{bx0}" y1="{y:.2}" x2="{bx1}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{label}</text>"##,
            bx0 - 6.0,
            y + 4.0,
        );
    }
    let x_ticks: Vec<(f64, String)> = if log_x {
        decade_ticks(x0, x1).into_iter().map(|v| (v, fmt_decade(v))).collect()
    } else {
        let (t, step) = linear_ticks(x0, x1);
        t.into_iter().map(|v| (v, fmt_linear(v, step))).collect()
    };
    for (v, label) in x_ticks {
        let x = ax.px(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{by0}" x2="{x:.2}" y2="{by1}" stroke="#dddddd"/><text x="{x:.2}" y="{:.1}" text-anchor="middle">{label}</text>"##,
            by1 + 16.0,
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (bx0 + bx1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        (by0 + by1) / 2.0,
        (by0 + by1) / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            if band.iter().any(|e| *e > 0.0) {
                let upper: Vec<f64> = s.y.iter().zip(band).map(|(y, e)| y + e).collect();
                let lower: Vec<f64> = s.y.iter().zip(band).map(|(y, e)| y - e).collect();
                let mut xs_rev = s.x.clone();
                xs_rev.reverse();
                let mut lower_rev = lower;
                lower_rev.reverse();
                let _ = writeln!(
                    svg,
                    r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    points(&ax, &s.x, &upper),
                    points(&ax, &xs_rev, &lower_rev)
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            points(&ax, &s.x, &s.y)
        );
        let ly = TOP + 12.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean cumulative regret per policy with a ± one standard error band.
pub fn regret_chart(title: &str, results: &[RunResult]) -> String {
    let series: Vec<Series> = by_policy(results)
        .into_iter()
        .map(|(label, runs)| {
            let len = runs.iter().map(|r| r.cum_regret.len()).min().unwrap_or(0);
            let mut y = Vec::with_capacity(len);
            let mut band = Vec::with_capacity(len);
            for k in 0..len {
                let col: Vec<f64> = runs.iter().map(|r| r.cum_regret[k]).collect();
                let (m, se) = mean_stderr(&col);
                y.push(m);
                band.push(se);
            }
            let x = (1..=len).map(|s| s as f64).collect();
            let band = (runs.len() > 1).then_some(band);
            Series { label, x, y, band }
        })
        .collect();
    line_chart(title, "step", "cumulative regret", &series, false, false)
}

/// The four widths against `b` on a logarithmic axis.
pub fn widths_chart(rows: &[WidthRow]) -> String {
    let x: Vec<f64> = rows.iter().map(|r| r.b).collect();
    let mk = |label: &str, f: fn(&WidthRow) -> f64| Series {
        label: label.to_string(),
        x: x.clone(),
        y: rows.iter().map(f).collect(),
        band: None,
    };
    let series = [
        mk("naive", |r| r.naive),
        mk("small-b", |r| r.small_b),
        mk("large-b", |r| r.large_b),
        mk("new", |r| r.new),
    ];
    line_chart("confidence width vs b", "b", "width (log scale)", &series, true, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn run(policy: &str, seed: u64, cum: Vec<f64>) -> RunResult {
        RunResult { policy: policy.into(), seed, cum_regret: cum, events: vec![], wall_time: Duration::ZERO }
    }

    #[test]
    fn single_run_has_no_band() {
        let svg = regret_chart("t", &[run("a", 0, vec![1.0, 2.0, 3.0])]);
        assert_eq!(svg.matches("class=\"series\"").count(), 1);
        assert_eq!(svg.matches("class=\"band\"").count(), 0);
    }

    #[test]
    fn two_policies_have_legend_entries() {
        let rs = [
            run("a", 0, vec![1.0, 2.0]),
            run("a", 1, vec![2.0, 4.0]),
            run("b<1>", 0, vec![0.0, 1.0]),
            run("b<1>", 1, vec![1.0, 1.0]),
        ];
        let svg = regret_chart("t", &rs);
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
        assert_eq!(svg.matches("class=\"legend\"").count(), 2);
        assert_eq!(svg.matches("class=\"band\"").count(), 2);
        assert!(svg.contains("b&lt;1&gt;"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn widths_chart_has_four_series() {
        let rows: Vec<WidthRow> = [0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|&b| WidthRow { b, naive: 3.0, small_b: 1.0 + b, large_b: 2.0, new: 1.0 })
            .collect();
        let svg = widths_chart(&rows);
        assert_eq!(svg.matches("class=\"series\"").count(), 4);
        for l in ["naive", "small-b", "large-b", "new"] {
            assert!(svg.contains(&format!(">{l}</text>")));
        }
    }
}
