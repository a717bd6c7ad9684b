//! Plot data: long-format `series,x,y` tables and a minimal static SVG
//! renderer for them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::accounting::ReferenceLaw;
use crate::curves::LearningCurveSet;
use crate::error::{Error, Result};
use crate::fitjoint::{intrinsic_performance, IntrinsicMap};
use crate::scalinglaw::{efficient_frontier, limit_curves, optimal_size_pfdays, predict_intrinsic, Limit, PowerLawFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    LearningCurves,
    Frontier,
    OptimalSize,
    Extrapolation,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "learning_curves" => PlotKind::LearningCurves,
            "frontier" => PlotKind::Frontier,
            "optimal_size" => PlotKind::OptimalSize,
            "extrapolation" => PlotKind::Extrapolation,
            other => return Err(Error::InvalidArgument(format!("unknown plot kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub kind: PlotKind,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

const GRID: usize = 48;

/// Intrinsic-performance view: model curves `I(N, E)` against compute
/// `N E`, the observed data mapped through `map`, and the frontier, which
/// lies on `y = x`.
pub fn learning_curves(
    law: &PowerLawFit,
    sizes: &[f64],
    e_window: (f64, f64),
    observed: Option<(&LearningCurveSet, &IntrinsicMap)>,
) -> Result<PlotData> {
    let mut series = Vec::new();
    for &n in sizes {
        let points = log_grid(e_window.0, e_window.1, GRID)
            .into_iter()
            .map(|e| Ok((n * e, predict_intrinsic(law, n, e)?.value)))
            .collect::<Result<Vec<_>>>()?;
        series.push(Series {
            name: format!("model N={n}"),
            points,
        });
    }
    if let Some((data, map)) = observed {
        for c in data.curves() {
            let n = c.model_size as f64;
            let points = c
                .points
                .iter()
                .map(|p| (n * p.interactions, intrinsic_performance(map, p.mean_metric).value))
                .collect();
            series.push(Series {
                name: format!("data N={}", c.model_size),
                points,
            });
        }
    }
    let frontier = frontier_points(law, sizes)?
        .into_iter()
        .map(|(n, e)| (n * e, n * e))
        .collect();
    series.push(Series {
        name: "frontier".into(),
        points: frontier,
    });
    Ok(PlotData {
        kind: PlotKind::LearningCurves,
        x_label: "compute (parameter-interactions)".into(),
        y_label: "intrinsic performance".into(),
        series,
    })
}

fn frontier_points(law: &PowerLawFit, sizes: &[f64]) -> Result<Vec<(f64, f64)>> {
    let lo = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sizes.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidArgument("need at least one positive model size".into()));
    }
    let ns = if hi > lo { log_grid(lo, hi, GRID) } else { vec![lo] };
    ns.into_iter().map(|n| Ok((n, efficient_frontier(law, n)?))).collect()
}

/// Compute-efficient interactions `E*(N)`.
pub fn frontier(law: &PowerLawFit, sizes: &[f64]) -> Result<PlotData> {
    Ok(PlotData {
        kind: PlotKind::Frontier,
        x_label: "model size N".into(),
        y_label: "interactions E".into(),
        series: vec![Series {
            name: "frontier".into(),
            points: frontier_points(law, sizes)?,
        }],
    })
}

/// Optimal model size against compute in PF-days, with reference laws.
pub fn optimal_size(
    law: &PowerLawFit,
    fppi: f64,
    compute: (f64, f64),
    references: &[ReferenceLaw],
) -> Result<PlotData> {
    let grid = log_grid(compute.0, compute.1, GRID);
    let points = grid
        .iter()
        .map(|&c| Ok((c, optimal_size_pfdays(law, c, fppi)?.value)))
        .collect::<Result<Vec<_>>>()?;
    let mut series = vec![Series {
        name: "fit".into(),
        points,
    }];
    for r in references {
        series.push(Series {
            name: r.name.clone(),
            points: grid.iter().map(|&c| (c, r.optimal_size(c))).collect(),
        });
    }
    Ok(PlotData {
        kind: PlotKind::OptimalSize,
        x_label: "compute (PF-days)".into(),
        y_label: "optimal model size N".into(),
        series,
    })
}

/// `I(N, E)` per size with the infinite-size bound `N_inf(E)` above them.
pub fn extrapolation(law: &PowerLawFit, sizes: &[f64], e_window: (f64, f64)) -> Result<PlotData> {
    let grid = log_grid(e_window.0, e_window.1, GRID);
    let mut series = Vec::new();
    for &n in sizes {
        let points = grid
            .iter()
            .map(|&e| Ok((e, predict_intrinsic(law, n, e)?.value)))
            .collect::<Result<Vec<_>>>()?;
        series.push(Series {
            name: format!("N={n}"),
            points,
        });
    }
    let bound = grid
        .iter()
        .map(|&e| Ok((e, limit_curves(law, Limit::NInf, e)?)))
        .collect::<Result<Vec<_>>>()?;
    series.push(Series {
        name: "N=inf".into(),
        points: bound,
    });
    Ok(PlotData {
        kind: PlotKind::Extrapolation,
        x_label: "interactions E".into(),
        y_label: "intrinsic performance".into(),
        series,
    })
}

pub fn to_csv(plot: &PlotData) -> String {
    let mut out = String::from("series,x,y\n");
    for s in &plot.series {
        for (x, y) in &s.points {
            let _ = writeln!(out, "{},{x:e},{y:e}", csv_field(&s.name));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-log line chart of every series.
pub fn to_svg(plot: &PlotData) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts = plot
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x.log10() - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y.log10() - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for d in x0.ceil() as i32..=x1.floor() as i32 {
        let x = sx(10f64.powi(d));
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">1e{d}</text>"#,
            h - m + 14.0
        );
    }
    for d in y0.ceil() as i32..=y1.floor() as i32 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{y:.1}" font-size="10" text-anchor="end">1e{d}</text>"#,
            m - 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 16.0,
        xml_escape(&plot.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        xml_escape(&plot.y_label)
    );
    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        if path.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            path.join(" "),
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
