//! Log-log MSE chart rendered as a standalone SVG 1.1 document.

use std::fmt::Write as _;
use std::io::Read;

use nestmc::convergence_slope;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// MSE points of one method, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: String,
    /// `(N, mse)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn slope(&self) -> Option<f64> {
        convergence_slope(&self.points).ok()
    }
}

#[derive(Debug)]
pub enum PlotError {
    Csv(csv::Error),
    MissingColumn(&'static str),
    BadValue { row: usize, column: &'static str },
    NoData,
}

impl std::fmt::Display for PlotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlotError::Csv(e) => write!(f, "summary CSV: {e}"),
            PlotError::MissingColumn(c) => write!(f, "summary CSV lacks column `{c}`"),
            PlotError::BadValue { row, column } => {
                write!(f, "summary CSV row {row}: invalid `{column}`")
            }
            PlotError::NoData => f.write_str("summary CSV has no plottable rows"),
        }
    }
}

impl std::error::Error for PlotError {}

impl From<csv::Error> for PlotError {
    fn from(e: csv::Error) -> Self {
        PlotError::Csv(e)
    }
}

/// Reads `method`, `N` and `mse` columns, grouping rows by method.
/// Rows with non-positive MSE cannot sit on a log axis and are skipped.
pub fn read_summary<R: Read>(input: R) -> Result<Vec<Series>, PlotError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(PlotError::MissingColumn(name))
    };
    let (method_col, n_col, mse_col) = (col("method")?, col("N")?, col("mse")?);

    let mut series: Vec<Series> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize, column: &'static str| -> Result<f64, PlotError> {
            record
                .get(idx)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or(PlotError::BadValue {
                    row: row + 1,
                    column,
                })
        };
        let method = record.get(method_col).unwrap_or_default().to_string();
        let n = parse(n_col, "N")?;
        let mse = parse(mse_col, "mse")?;
        if !(n > 0.0 && mse > 0.0 && mse.is_finite()) {
            continue;
        }
        match series.iter_mut().find(|s| s.method == method) {
            Some(s) => s.points.push((n, mse)),
            None => series.push(Series {
                method,
                points: vec![(n, mse)],
            }),
        }
    }
    if series.is_empty() {
        return Err(PlotError::NoData);
    }
    Ok(series)
}

/// `-1.0` renders as `−1.00` (typographic minus).
pub fn format_slope(slope: f64) -> String {
    let s = format!("{slope:.2}");
    match s.strip_prefix('-') {
        Some(rest) => format!("\u{2212}{rest}"),
        None => s,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(series: &[Series]) -> String {
    let xs = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0.log2()));
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1.log10()));
    let (mut x0, mut x1) = bounds(xs);
    let (mut y0, mut y1) = bounds(ys);
    x0 = x0.floor();
    x1 = x1.ceil().max(x0 + 1.0);
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
    );
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    let mut tick = x0;
    while tick <= x1 + 1e-9 {
        let x = sx(tick);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + plot_h,
            TOP + plot_h + 18.0,
            tick as i64
        );
        tick += 1.0;
    }
    let mut tick = y0;
    while tick <= y1 + 1e-9 {
        let y = sy(tick);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            tick as i64
        );
        tick += 1.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">log2 N (total samples)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">MSE</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (idx, s) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(n, mse)| format!("{:.2},{:.2}", sx(n.log2()), sy(mse.log10())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 20.0 + idx as f64 * 36.0;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.method)
        );
        let slope = s
            .slope()
            .map(|v| format!("slope {}", format_slope(v)))
            .unwrap_or_else(|| "slope n/a".into());
        let _ = writeln!(
            svg,
            r#"<text class="slope" x="{:.2}" y="{:.2}">{slope}</text>"#,
            lx + 26.0,
            ly + 19.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}
