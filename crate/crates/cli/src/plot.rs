//! Minimal SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A horizontal reference line.
pub struct Level {
    pub label: String,
    pub value: f64,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub levels: Vec<Level>,
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let usable = |y: f64| y.is_finite() && (!self.log_y || y > 0.0);
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.levels.iter().map(|l| l.value))
            .filter(|&y| usable(y))
            .map(ty);
        let (x0, x1) = bounds(xs.filter(|x| x.is_finite()));
        let (y0, y1) = bounds(ys);
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            svg,
            r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let x = x0 + f * (x1 - x0);
            let y = y0 + f * (y1 - y0);
            let label = if self.log_y { format!("1e{y:.1}") } else { format!("{y:.4}") };
            let (sx, sy) = (left + f * (right - left), bottom - f * (bottom - top));
            let _ = writeln!(svg, r#"<text x="{sx}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, short(x));
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, left - 4.0, sy + 4.0);
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 20.0, escape(&self.x_label));
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        let mut legend_row = 0;
        for (k, level) in self.levels.iter().enumerate().filter(|(_, l)| usable(l.value)) {
            let color = COLORS[(k + self.series.len()) % COLORS.len()];
            let y = py(level.value);
            let _ = writeln!(
                svg,
                r#"<line x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#
            );
            legend(&mut svg, legend_row, color, &level.label);
            legend_row += 1;
        }
        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut d = String::new();
            for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && usable(p.1)) {
                let _ = write!(d, "{}{:.2} {:.2} ", if d.is_empty() { "M" } else { "L" }, px(x), py(y));
            }
            if !d.is_empty() {
                let _ = writeln!(svg, r#"<path d="{}" stroke="{color}" fill="none"/>"#, d.trim_end());
            }
            legend(&mut svg, legend_row, color, &s.label);
            legend_row += 1;
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn legend(svg: &mut String, row: usize, color: &str, label: &str) {
    let y = MARGIN + 14.0 * row as f64;
    let x = WIDTH - MARGIN - 150.0;
    let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 18.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(label));
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn short(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
