//! Minimal SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

pub struct Series<'a> {
    pub label: &'a str,
    /// `(x, y)` points; NaN `y` values break the line.
    pub points: Vec<(f64, f64)>,
}

impl<'a> Series<'a> {
    /// Points at x = offset, offset + 1, ...
    pub fn from_values(label: &'a str, offset: usize, values: &[f64]) -> Self {
        Series {
            label,
            points: values.iter().enumerate().map(|(i, &v)| ((offset + i) as f64, v)).collect(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render `series` with optional shaded x-intervals (e.g. hidden regions).
pub fn line_chart(title: &str, series: &[Series<'_>], shaded: &[(f64, f64)]) -> String {
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for &(a, b) in shaded {
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="#cccccc" fill-opacity="0.5"/>"##,
            sx(a),
            (sx(b) - sx(a)).max(0.5),
            HEIGHT - 2.0 * MARGIN
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(svg, r#"<text x="4" y="{:.2}">{y1:.3}</text>"#, MARGIN + 4.0);
    let _ = writeln!(svg, r#"<text x="4" y="{:.2}">{y0:.3}</text>"#, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{:.2}">{x0}</text>"#, HEIGHT - MARGIN + 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{x1}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 15.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
            pen_down = true;
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = MARGIN + 15.0 + 15.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
