//! CSV and SVG emission. Output is byte-stable for fixed input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Builds a CSV body in memory; `finish` appends the status trailer and
/// writes the file in one go.
pub struct CsvReport {
    body: String,
}

impl CsvReport {
    pub fn new(header: &[&str]) -> Self {
        Self {
            body: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.body.push_str(&fields.join(","));
        self.body.push('\n');
    }

    /// `# status=ok` or `# status=error: <message>`.
    pub fn finish(mut self, path: &Path, error: Option<&str>) -> std::io::Result<()> {
        match error {
            None => self.body.push_str("# status=ok\n"),
            Some(msg) => {
                let _ = writeln!(self.body, "# status=error: {}", msg.replace('\n', " "));
            }
        }
        fs::write(path, self.body)
    }
}

/// Shortest round-trip representation; empty for `None`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// One polyline: `(x, y)` points; non-positive `y` break the line.
pub struct Series {
    pub label: String,
    pub dashed: bool,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub const PALETTE: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Line chart with a linear x axis and a log10 y axis.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 200.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;

    let usable: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(_, y)| y.is_finite() && y > 0.0)
        .collect();
    let (x_min, x_max) = usable
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (ly_min, ly_max) = usable.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
        (lo.min(y.log10().floor()), hi.max(y.log10().ceil()))
    });
    let (x_min, x_max) = if usable.is_empty() { (0.0, 1.0) } else { (x_min, x_max.max(x_min + 1.0)) };
    let (ly_min, ly_max) = if usable.is_empty() { (0.0, 1.0) } else { (ly_min, ly_max.max(ly_min + 1.0)) };
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (ly_max - y.log10()) / (ly_max - ly_min) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));

    // Axes.
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(svg, r#"<path d="M{x0:.1},{y0:.1} L{x0:.1},{y1:.1} L{x1:.1},{y1:.1}" fill="none" stroke="black"/>"#);
    for e in (ly_min as i64)..=(ly_max as i64) {
        let y = py(10f64.powi(e as i32));
        let _ = writeln!(svg, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"#, x0 - 6.0, y + 4.0);
    }
    let mut x = x_min.ceil();
    while x <= x_max {
        let xp = px(x);
        let _ = writeln!(svg, r#"<line x1="{xp:.1}" y1="{y1:.1}" x2="{xp:.1}" y2="{:.1}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, y1 + 20.0);
        x += 1.0;
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if !(y.is_finite() && y > 0.0) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(x), py(y));
            pen_down = true;
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            d.trim_end(),
            s.color
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"{dash}/>"#,
            x1 + 15.0,
            x1 + 45.0,
            s.color
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x1 + 52.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Geometric mean per x over groups of curves, skipping non-positive values.
pub fn geometric_mean_curve(curves: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for curve in curves {
        for &(x, y) in curve {
            let entry = acc.entry(x.round() as i64).or_insert((x, 0.0, 0));
            if y.is_finite() && y > 0.0 {
                entry.1 += y.ln();
                entry.2 += 1;
            }
        }
    }
    acc.values()
        .map(|&(x, s, n)| (x, if n == 0 { 0.0 } else { (s / n as f64).exp() }))
        .collect()
}
