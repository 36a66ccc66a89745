//! Hand-emitted SVG scatter and line plots from CSV columns.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Points; coloured by a `label` column when present.
    Scatter,
    /// One polyline per y column.
    Line,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatter" => Ok(PlotKind::Scatter),
            "line" => Ok(PlotKind::Line),
            other => Err(Error::invalid(format!("unknown plot kind `{other}`"))),
        }
    }
}

/// Header names and numeric rows. Cells that do not parse become NaN and
/// are skipped when drawing.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines
            .next()
            .ok_or_else(|| Error::Csv("empty input".into()))?;
        let columns: Vec<String> = head.split(',').map(|c| c.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            if cells.len() != columns.len() {
                return Err(Error::Csv(format!(
                    "row {}: expected {} cells, got {}",
                    i + 2,
                    columns.len(),
                    cells.len()
                )));
            }
            rows.push(cells);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            Error::Csv(format!(
                "no column `{name}` (have {})",
                self.columns.join(", ")
            ))
        })
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, title: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        r - l,
        b - t
    );
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let xv = f.x.0 + u * (f.x.1 - f.x.0);
        let yv = f.y.0 + u * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{:.2}" stroke="#333"/>"##,
            b + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xv:.3}</text>"#,
            b + 18.0
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="#333"/>"##,
            l - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{yv:.3}</text>"#,
            l - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="28" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Renders `y_cols` against `x_col`. Output depends only on the inputs.
pub fn render_svg(
    table: &Table,
    kind: PlotKind,
    x_col: &str,
    y_cols: &[&str],
    title: &str,
) -> Result<String> {
    if y_cols.is_empty() {
        return Err(Error::invalid("need at least one y column"));
    }
    let xi = table.column(x_col)?;
    let yi = y_cols
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let label = match kind {
        PlotKind::Scatter => table.column("label").ok(),
        PlotKind::Line => None,
    };
    let frame = Frame {
        x: bounds(table.rows.iter().map(|r| r[xi])),
        y: bounds(
            table
                .rows
                .iter()
                .flat_map(|r| yi.iter().map(move |&j| r[j])),
        ),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut out, &frame, x_col, &y_cols.join(", "), title);
    for (series, &j) in yi.iter().enumerate() {
        match kind {
            PlotKind::Scatter => {
                for r in &table.rows {
                    if !(r[xi].is_finite() && r[j].is_finite()) {
                        continue;
                    }
                    let c = match label {
                        Some(li) if r[li].is_finite() && r[li] >= 0.0 => r[li] as usize,
                        _ => series,
                    };
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#,
                        frame.px(r[xi]),
                        frame.py(r[j]),
                        PALETTE[c % PALETTE.len()]
                    );
                }
            }
            PlotKind::Line => {
                let pts: Vec<String> = table
                    .rows
                    .iter()
                    .filter(|r| r[xi].is_finite() && r[j].is_finite())
                    .map(|r| format!("{:.2},{:.2}", frame.px(r[xi]), frame.py(r[j])))
                    .collect();
                let colour = PALETTE[series % PALETTE.len()];
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{colour}">{}</text>"#,
                    WIDTH - MARGIN + 4.0,
                    MARGIN + 14.0 * (series as f64 + 1.0),
                    escape(y_cols[series])
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
