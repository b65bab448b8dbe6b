//! Line charts with error bars as standalone SVG.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub mean: f64,
    /// Half-length of the error bar.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round step (1, 2 or 5 times a power of ten) giving about `target` intervals.
fn nice_step(range: f64, target: f64) -> f64 {
    let raw = range / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Axis bounds snapped outward to the tick step, and the step.
fn axis(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi - lo > 1e-12 * hi.abs().max(1.0) {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    };
    let step = nice_step(hi - lo, 5.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

impl Chart {
    pub fn render(&self) -> String {
        let points = self.series.iter().flat_map(|s| &s.points);
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x_lo = x_lo.min(p.x);
            x_hi = x_hi.max(p.x);
            y_lo = y_lo.min(p.mean - p.std);
            y_hi = y_hi.max(p.mean + p.std);
        }
        if !x_lo.is_finite() {
            (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
        }
        let (x0, x1, xs) = axis(x_lo, x_hi);
        let (y0, y1, ys) = axis(y_lo, y_hi);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        let n_x = ((x1 - x0) / xs).round() as usize;
        for i in 0..=n_x {
            let v = x0 + i as f64 * xs;
            let x = px(v);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##, TOP + ph);
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                tick_label(v, xs)
            );
        }
        let n_y = ((y1 - y0) / ys).round() as usize;
        for i in 0..=n_y {
            let v = y0 + i as f64 * ys;
            let y = py(v);
            let _ = writeln!(out, r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/>"##, LEFT + pw);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                tick_label(v, ys)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let (lx, ly) = (20.0, TOP + ph / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let _ = writeln!(out, r#"<g class="series" stroke="{color}" fill="{color}">"#);
            let path: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.mean))).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke-width="2"/>"#, path.join(" "));
            for p in &s.points {
                let (x, lo, hi) = (px(p.x), py(p.mean - p.std), py(p.mean + p.std));
                let _ = writeln!(out, r#"<line class="errorbar" x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}"/>"#);
                for y in [lo, hi] {
                    let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, x - 4.0, x + 4.0);
                }
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5"/>"#, py(p.mean));
            }
            let y = TOP + 10.0 + 20.0 * k as f64;
            let x = LEFT + pw + 15.0;
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke-width="2"/>"#, x + 24.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" stroke="none" fill="black">{}</text>"#,
                x + 30.0,
                y + 4.0,
                escape(&s.label)
            );
            let _ = writeln!(out, "</g>");
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_are_round() {
        assert_eq!(nice_step(10.0, 5.0), 2.0);
        assert_eq!(nice_step(0.3, 5.0), 0.1);
        assert_eq!(nice_step(28.0, 5.0), 10.0);
        let (lo, hi, step) = axis(14.0, 42.0);
        assert_eq!((lo, hi, step), (10.0, 50.0, 10.0));
    }

    #[test]
    fn flat_axis_is_padded() {
        let (lo, hi, _) = axis(0.4, 0.4);
        assert!(lo < 0.4 && hi > 0.4);
    }

    #[test]
    fn labels_are_escaped() {
        let chart = Chart {
            title: "a < b & c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series { label: "\"q\"".into(), points: vec![Point { x: 1.0, mean: 2.0, std: 0.5 }] }],
        };
        let svg = chart.render();
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(svg.contains("&quot;q&quot;"));
    }

    #[test]
    fn negative_zero_tick() {
        assert_eq!(tick_label(-0.0001, 0.1), "0.0");
        assert_eq!(tick_label(-0.5, 0.1), "-0.5");
    }
}
