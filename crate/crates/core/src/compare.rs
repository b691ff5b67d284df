//! Side-by-side comparison of two landscape grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::LandscapeGrid;
use crate::metrics::{curvature_report, CurvatureReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub convexity_fraction: f64,
    pub flatness_radius: f64,
    pub loss_range: f64,
    pub center_gap: f64,
}

/// Reports for grids `a` and `b`, and `b − a` for each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: CurvatureReport,
    pub b: CurvatureReport,
    pub delta: ReportDelta,
}

fn same_coords(x: &[f64], y: &[f64]) -> bool {
    x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(1.0))
}

/// Compares two grids over identical coordinates. Each grid's flatness
/// tolerance is derived from its own center loss unless `epsilon` is given.
pub fn compare_grids(a: &LandscapeGrid, b: &LandscapeGrid, epsilon: Option<f64>) -> Result<Comparison> {
    if !same_coords(&a.alphas, &b.alphas) || !same_coords(&a.betas, &b.betas) {
        return Err(Error::CoordinateMismatch(format!(
            "{}×{} grid over ±{} vs {}×{} grid over ±{}",
            a.alphas.len(),
            a.betas.len(),
            a.half_range(),
            b.alphas.len(),
            b.betas.len(),
            b.half_range()
        )));
    }
    let eps = |g: &LandscapeGrid| epsilon.unwrap_or_else(|| crate::metrics::default_epsilon(g.base_loss));
    let ra = curvature_report(a, eps(a))?;
    let rb = curvature_report(b, eps(b))?;
    Ok(Comparison { delta: delta(&ra, &rb), a: ra, b: rb })
}

pub fn delta(a: &CurvatureReport, b: &CurvatureReport) -> ReportDelta {
    ReportDelta {
        convexity_fraction: b.convexity_fraction - a.convexity_fraction,
        flatness_radius: b.flatness_radius - a.flatness_radius,
        loss_range: b.loss_range - a.loss_range,
        center_gap: b.center_gap - a.center_gap,
    }
}

impl Comparison {
    /// Plain-text table with one row per metric.
    pub fn table(&self, label_a: &str, label_b: &str) -> String {
        let rows = [
            ("convexity_fraction", self.a.convexity_fraction, self.b.convexity_fraction, self.delta.convexity_fraction),
            ("flatness_radius", self.a.flatness_radius, self.b.flatness_radius, self.delta.flatness_radius),
            ("loss_range", self.a.loss_range, self.b.loss_range, self.delta.loss_range),
            ("center_gap", self.a.center_gap, self.b.center_gap, self.delta.center_gap),
        ];
        let mut s = format!("{:<20} {:>14} {:>14} {:>14}\n", "metric", label_a, label_b, "delta");
        for (name, x, y, d) in rows {
            s.push_str(&format!("{name:<20} {x:>14.6} {y:>14.6} {d:>+14.6}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(f: impl Fn(f64, f64) -> f64) -> LandscapeGrid {
        LandscapeGrid::from_fn(11, 1.0, f).unwrap()
    }

    #[test]
    fn self_comparison_is_zero() {
        let g = grid(|a, b| a * a + 0.5 * b * b + 1.0);
        let c = compare_grids(&g, &g, None).unwrap();
        assert_eq!(
            c.delta,
            ReportDelta { convexity_fraction: 0.0, flatness_radius: 0.0, loss_range: 0.0, center_gap: 0.0 }
        );
    }

    #[test]
    fn paraboloid_against_saddle() {
        let c = compare_grids(&grid(|a, b| a * a - b * b), &grid(|a, b| a * a + b * b), None).unwrap();
        assert_eq!(c.delta.convexity_fraction, 1.0);
        assert!(c.table("saddle", "bowl").contains("+1.000000"));
    }

    #[test]
    fn coordinates_must_match() {
        let other = LandscapeGrid::from_fn(11, 0.5, |a, _| a).unwrap();
        assert!(matches!(compare_grids(&grid(|a, _| a), &other, None), Err(Error::CoordinateMismatch(_))));
    }
}
