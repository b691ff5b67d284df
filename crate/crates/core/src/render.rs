//! SVG heatmaps and marching-squares contour plots of landscape grids.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::landscape::LandscapeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Contour,
    Heatmap,
    Both,
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contour" => Ok(RenderMode::Contour),
            "heatmap" => Ok(RenderMode::Heatmap),
            "both" => Ok(RenderMode::Both),
            other => Err(contract(format!("unknown render mode `{other}` (contour, heatmap, both)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub mode: RenderMode,
    pub contour_levels: usize,
    pub log_scale: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self { mode: RenderMode::Both, contour_levels: 12, log_scale: true }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.contour_levels < 2 {
            return Err(contract(format!("need at least 2 contour levels, got {}", self.contour_levels)));
        }
        Ok(())
    }
}

/// Iso-line piece in `(alpha, beta)` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub level: usize,
    pub from: (f64, f64),
    pub to: (f64, f64),
}

/// Values on the plotting scale: `ln f` when every finite loss is
/// positive, `ln(1 + f − min)` otherwise. Infinite entries stay infinite.
pub fn scaled_values(grid: &LandscapeGrid, log_scale: bool) -> Result<Vec<Vec<f64>>> {
    let min = grid.finite_values().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::NoFiniteValues);
    }
    let f = |v: f64| {
        if !v.is_finite() || !log_scale {
            v
        } else if min > 0.0 {
            v.ln()
        } else {
            (v - min).ln_1p()
        }
    };
    Ok(grid.losses.iter().map(|row| row.iter().map(|&v| f(v)).collect()).collect())
}

fn finite_bounds(values: &[Vec<f64>]) -> (f64, f64) {
    values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `count` evenly spaced levels strictly between the smallest and largest
/// finite value; none for a constant field.
pub fn contour_levels(values: &[Vec<f64>], count: usize) -> Vec<f64> {
    let (lo, hi) = finite_bounds(values);
    if hi <= lo {
        return Vec::new();
    }
    (0..count).map(|k| lo + (k + 1) as f64 * (hi - lo) / (count + 1) as f64).collect()
}

fn crossing(pa: (f64, f64), va: f64, pb: (f64, f64), vb: f64, level: f64) -> (f64, f64) {
    let t = (level - va) / (vb - va);
    (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
}

/// Marching squares over `values[i][j]` at `(alphas[i], betas[j])`. A
/// corner counts as inside when its value is at least the level; saddle
/// cells are resolved by the mean of their four corners. Cells touching a
/// non-finite value are skipped.
pub fn contour_segments(alphas: &[f64], betas: &[f64], values: &[Vec<f64>], levels: &[f64]) -> Vec<Segment> {
    let mut out = Vec::new();
    for i in 0..alphas.len().saturating_sub(1) {
        for j in 0..betas.len().saturating_sub(1) {
            let p = [
                (alphas[i], betas[j]),
                (alphas[i + 1], betas[j]),
                (alphas[i + 1], betas[j + 1]),
                (alphas[i], betas[j + 1]),
            ];
            let v = [values[i][j], values[i + 1][j], values[i + 1][j + 1], values[i][j + 1]];
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            // Edge k joins corners k and k+1; both ends are always taken in
            // grid order so neighbouring cells compute identical points.
            let edge = |k: usize, level: f64| match k {
                0 => crossing(p[0], v[0], p[1], v[1], level),
                1 => crossing(p[1], v[1], p[2], v[2], level),
                2 => crossing(p[3], v[3], p[2], v[2], level),
                _ => crossing(p[0], v[0], p[3], v[3], level),
            };
            for (li, &level) in levels.iter().enumerate() {
                let inside = v.map(|x| x >= level);
                let crossed: Vec<usize> = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
                match crossed.len() {
                    2 => out.push(Segment { level: li, from: edge(crossed[0], level), to: edge(crossed[1], level) }),
                    4 => {
                        let center = (v[0] + v[1] + v[2] + v[3]) / 4.0 >= level;
                        for k in (0..4).filter(|&k| inside[k] != center) {
                            out.push(Segment { level: li, from: edge((k + 3) % 4, level), to: edge(k, level) });
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

/// Contour segments of a grid under `spec`'s level count and scale.
pub fn grid_segments(grid: &LandscapeGrid, spec: &RenderSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    let values = scaled_values(grid, spec.log_scale)?;
    let levels = contour_levels(&values, spec.contour_levels);
    Ok(contour_segments(&grid.alphas, &grid.betas, &values, &levels))
}

/// Reserved fill for cells whose loss overflowed.
pub const OVERFLOW_COLOR: &str = "#ff00ff";

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

/// Dark-to-bright colour ramp for `t ∈ [0, 1]`.
pub fn color_map(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.iter().rposition(|s| s.0 <= t).unwrap_or(0).min(STOPS.len() - 2);
    let (t0, c0) = STOPS[k];
    let (t1, c1) = STOPS[k + 1];
    let u = (t - t0) / (t1 - t0);
    let ch = |n: usize| (c0[n] + u * (c1[n] - c0[n])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Renders `grid` as a standalone SVG 1.1 document. Identical inputs give
/// identical bytes.
pub fn render_svg(grid: &LandscapeGrid, spec: &RenderSpec) -> Result<String> {
    spec.validate()?;
    let values = scaled_values(grid, spec.log_scale)?;
    let (lo, hi) = finite_bounds(&values);
    let (a0, a1) = (grid.alphas[0], *grid.alphas.last().expect("non-empty"));
    let (b0, b1) = (grid.betas[0], *grid.betas.last().expect("non-empty"));
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let x = |a: f64| MARGIN + (a - a0) / span(a0, a1) * SIZE;
    let y = |b: f64| MARGIN + SIZE - (b - b0) / span(b0, b1) * SIZE;
    let total = SIZE + 2.0 * MARGIN;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{total}" height="{total}" fill="#ffffff"/>"##);

    if matches!(spec.mode, RenderMode::Heatmap | RenderMode::Both) {
        let (na, nb) = (grid.alphas.len(), grid.betas.len());
        let cw = SIZE / na as f64;
        let chh = SIZE / nb as f64;
        let _ = writeln!(s, r#"<g id="heatmap" shape-rendering="crispEdges">"#);
        for i in 0..na {
            for j in 0..nb {
                let v = values[i][j];
                let fill = if v.is_finite() { color_map((v - lo) / span(lo, hi)) } else { OVERFLOW_COLOR.to_string() };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#,
                    MARGIN + i as f64 * cw,
                    MARGIN + SIZE - (j + 1) as f64 * chh,
                    cw,
                    chh
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    if matches!(spec.mode, RenderMode::Contour | RenderMode::Both) {
        let levels = contour_levels(&values, spec.contour_levels);
        let segs = contour_segments(&grid.alphas, &grid.betas, &values, &levels);
        let stroke = if spec.mode == RenderMode::Both { "#ffffff" } else { "#1f3b73" };
        let _ = writeln!(s, r#"<g id="contours" fill="none" stroke="{stroke}" stroke-width="1">"#);
        if spec.mode == RenderMode::Contour {
            for (i, row) in values.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.3}" cy="{:.3}" r="2" fill="{OVERFLOW_COLOR}" stroke="none"/>"#,
                            x(grid.alphas[i]),
                            y(grid.betas[j])
                        );
                    }
                }
            }
        }
        for seg in &segs {
            let _ = writeln!(
                s,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" data-level="{}"/>"#,
                x(seg.from.0),
                y(seg.from.1),
                x(seg.to.0),
                y(seg.to.1),
                seg.level
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#000000"/>"##
    );
    let font = r#"font-family="sans-serif" font-size="14""#;
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" {font} text-anchor="middle">α</text>"#, MARGIN + SIZE / 2.0, total - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" {font} text-anchor="middle" transform="rotate(-90 16 {})">β</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
    let small = r#"font-family="sans-serif" font-size="11""#;
    for a in [a0, 0.0, a1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}" {small} text-anchor="middle">{a}</text>"#,
            x(a),
            MARGIN + SIZE + 16.0
        );
    }
    for b in [b0, 0.0, b1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.3}" {small} text-anchor="end">{b}</text>"#, MARGIN - 6.0, y(b) + 4.0);
    }
    let scale = if spec.log_scale { "log loss" } else { "loss" };
    let title = if grid.regime.is_empty() { String::new() } else { format!("{} ", grid.regime) };
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" {small}>{title}{scale} {lo:.4} to {hi:.4}</text>"#, MARGIN - 16.0);
    s.push_str("</svg>\n");
    Ok(s)
}
