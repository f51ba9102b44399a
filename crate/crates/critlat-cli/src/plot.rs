//! Deterministic SVG emission from estimate CSVs: same bytes for the same
//! input, error bars from the stderr column, and an optional horizontal
//! reference line.

use crate::harness::{HarnessError, Result};
use std::fmt::Write;

const PI2_OVER_24: f64 = std::f64::consts::PI * std::f64::consts::PI / 24.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `n * pn_hat` against `log n` with a reference line at `pi^2 / 24`.
    PnHat,
    /// Generic `value` against `n`, one series per file.
    Series,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pn-hat" => Ok(PlotKind::PnHat),
            "series" => Ok(PlotKind::Series),
            other => Err(HarnessError::InvalidParams(format!(
                "plot kind must be \"pn-hat\" or \"series\", got {other:?}"
            ))),
        }
    }
}

struct PlotPoint {
    x: f64,
    y: f64,
    e: f64,
}

/// Parses an estimates CSV (`n,estimator,value,stderr,...` after `#` comment
/// lines), selects the rows for `kind`, and returns (SVG bytes, the plotted
/// CSV slice).
pub fn emit_plot_data(csv: &str, kind: PlotKind) -> Result<(String, String)> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Schema("empty input".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let want = ["n", "estimator", "value", "stderr"];
    if cols.len() < want.len() || cols[..want.len()] != want {
        return Err(HarnessError::Schema(format!(
            "header starts with {:?}, expected {:?}",
            &cols[..cols.len().min(4)],
            want
        )));
    }
    let mut points = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(HarnessError::Schema(format!(
                "row {} has {} fields, header has {}",
                k + 1,
                f.len(),
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| HarnessError::Schema(format!("bad number {s:?} in row {}", k + 1)))
        };
        let n = parse(f[0])?;
        let value = parse(f[2])?;
        let stderr = parse(f[3])?;
        match kind {
            PlotKind::PnHat => {
                if f[1] == "pn_hat" {
                    points.push(PlotPoint {
                        x: n.ln(),
                        y: n * value,
                        e: n * stderr,
                    });
                }
            }
            PlotKind::Series => points.push(PlotPoint {
                x: n,
                y: value,
                e: stderr,
            }),
        }
    }
    points.sort_by(|a, b| a.x.total_cmp(&b.x));

    let mut slice = String::from("x,y,stderr\n");
    for p in &points {
        writeln!(slice, "{},{},{}", fmt(p.x), fmt(p.y), fmt(p.e)).unwrap();
    }
    let reference = match kind {
        PlotKind::PnHat => Some(PI2_OVER_24),
        PlotKind::Series => None,
    };
    let (x_label, y_label) = match kind {
        PlotKind::PnHat => ("log n", "n * pn_hat"),
        PlotKind::Series => ("n", "value"),
    };
    Ok((render_svg(&points, reference, x_label, y_label), slice))
}

fn fmt(v: f64) -> String {
    // fixed shortest-roundtrip formatting keeps the bytes deterministic
    format!("{v}")
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: f64 = 56.0;

fn render_svg(points: &[PlotPoint], reference: Option<f64>, x_label: &str, y_label: &str) -> String {
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = points
        .iter()
        .flat_map(|p| [p.y - p.e, p.y + p.e])
        .collect();
    if let Some(r) = reference {
        ys.push(r);
    }
    let range = |v: &mut Vec<f64>| -> (f64, f64) {
        if v.is_empty() {
            return (0.0, 1.0);
        }
        let lo = v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.06 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = range(&mut xs);
    let (y0, y1) = range(&mut ys);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>").unwrap();
    // axes
    writeln!(
        s,
        "<path d=\"M {m} {m} L {m} {b} L {r} {b}\" stroke=\"black\" fill=\"none\"/>",
        m = M,
        b = H - M,
        r = W - M
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        fmt(W / 2.0),
        fmt(H - 14.0),
        x_label
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {})\">{}</text>",
        fmt(H / 2.0),
        fmt(H / 2.0),
        y_label
    )
    .unwrap();
    for (lo, hi, vertical) in [(x0, x1, false), (y0, y1, true)] {
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            if vertical {
                writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>",
                    fmt(M - 6.0),
                    fmt(py(v) + 3.0),
                    fmt_tick(v)
                )
                .unwrap();
            } else {
                writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
                    fmt(px(v)),
                    fmt(H - M + 16.0),
                    fmt_tick(v)
                )
                .unwrap();
            }
        }
    }
    if let Some(r) = reference {
        writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"crimson\" \
             stroke-dasharray=\"6 4\"/>",
            fmt(M),
            fmt(py(r)),
            fmt(W - M),
            fmt(py(r))
        )
        .unwrap();
    }
    if !points.is_empty() {
        let mut path = String::new();
        for (i, p) in points.iter().enumerate() {
            write!(
                path,
                "{}{} {}",
                if i == 0 { "M " } else { " L " },
                fmt(px(p.x)),
                fmt(py(p.y))
            )
            .unwrap();
        }
        writeln!(s, "<path d=\"{path}\" stroke=\"steelblue\" fill=\"none\"/>").unwrap();
        for p in points {
            writeln!(
                s,
                "<line x1=\"{x}\" y1=\"{lo}\" x2=\"{x}\" y2=\"{hi}\" stroke=\"steelblue\"/>",
                x = fmt(px(p.x)),
                lo = fmt(py(p.y - p.e)),
                hi = fmt(py(p.y + p.e))
            )
            .unwrap();
            writeln!(
                s,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"steelblue\"/>",
                fmt(px(p.x)),
                fmt(py(p.y))
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# config abc\nn,estimator,value,stderr,outer,inner,seed\n\
        2,pn_hat,0.2,0.01,10,3,1\n4,pn_hat,0.1,0.005,10,3,1\n4,zn,0.3,0.01,10,3,1\n";

    #[test]
    fn pn_hat_selects_scales_and_is_deterministic() {
        let (svg, slice) = emit_plot_data(SAMPLE, PlotKind::PnHat).unwrap();
        assert_eq!(slice.lines().count(), 3, "{slice}");
        assert!(slice.contains("0.4,"));
        assert!(svg.contains("crimson"), "reference line missing");
        let (svg2, slice2) = emit_plot_data(SAMPLE, PlotKind::PnHat).unwrap();
        assert_eq!(svg, svg2);
        assert_eq!(slice, slice2);
    }

    #[test]
    fn empty_rows_yield_axes_only_svg() {
        let (svg, slice) = emit_plot_data(
            "n,estimator,value,stderr,outer,inner,seed\n",
            PlotKind::Series,
        )
        .unwrap();
        assert_eq!(slice, "x,y,stderr\n");
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("circle"));
    }

    #[test]
    fn schema_violations_rejected() {
        assert!(matches!(
            emit_plot_data("a,b,c\n1,2,3\n", PlotKind::Series),
            Err(HarnessError::Schema(_))
        ));
        assert!(matches!(
            emit_plot_data(
                "n,estimator,value,stderr,outer,inner,seed\n1,zn,x,0,0,0,0\n",
                PlotKind::Series
            ),
            Err(HarnessError::Schema(_))
        ));
    }
}
