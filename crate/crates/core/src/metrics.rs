//! Flatness and convexity summaries of a landscape grid.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::landscape::LandscapeGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    /// Share of interior points whose discrete Hessian is positive semidefinite.
    pub convexity_fraction: f64,
    /// Largest ℓ∞ radius around the center inside which every point stays
    /// within `epsilon` of the center loss.
    pub flatness_radius: f64,
    /// Max minus min over finite losses.
    pub loss_range: f64,
    /// Mean finite loss minus the center loss.
    pub center_gap: f64,
    pub epsilon: f64,
}

/// Flatness tolerance used when none is given: a tenth of the center loss.
pub fn default_epsilon(base_loss: f64) -> f64 {
    0.1 * (base_loss + 1e-8)
}

fn uniform_step(coords: &[f64]) -> Option<f64> {
    let h = coords[1] - coords[0];
    let ok = coords.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
    (ok && h > 0.0).then_some(h)
}

/// Whether the 2×2 Hessian `[[a, c], [c, b]]` is positive semidefinite,
/// allowing rounding slack `tol`.
fn is_psd(a: f64, b: f64, c: f64, tol: f64) -> bool {
    a >= -tol && b >= -tol && a * b - c * c >= -tol * (a.abs() + b.abs() + tol)
}

pub fn curvature_report(grid: &LandscapeGrid, epsilon: f64) -> Result<CurvatureReport> {
    let (n, m) = (grid.alphas.len(), grid.betas.len());
    if n < 5 || m < 5 {
        return Err(contract(format!("curvature needs a grid of at least 5×5, got {n}×{m}")));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(contract(format!("flatness epsilon {epsilon} must be non-negative")));
    }
    let (ha, hb) = match (uniform_step(&grid.alphas), uniform_step(&grid.betas)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(contract("grid coordinates must be evenly spaced")),
    };
    let f = &grid.losses;
    let finite: Vec<f64> = grid.finite_values().collect();
    if finite.is_empty() {
        return Err(Error::NoFiniteValues);
    }

    let mut convex = 0usize;
    for i in 1..n - 1 {
        for j in 1..m - 1 {
            let c = f[i][j];
            let faa = (f[i + 1][j] - 2.0 * c + f[i - 1][j]) / (ha * ha);
            let fbb = (f[i][j + 1] - 2.0 * c + f[i][j - 1]) / (hb * hb);
            let fab = (f[i + 1][j + 1] - f[i + 1][j - 1] - f[i - 1][j + 1] + f[i - 1][j - 1]) / (4.0 * ha * hb);
            if ![faa, fbb, fab].iter().all(|v| v.is_finite()) {
                continue;
            }
            let tol = 1e-9 * c.abs().max(1.0) / (ha * hb);
            if is_psd(faa, fbb, fab, tol) {
                convex += 1;
            }
        }
    }
    let convexity_fraction = convex as f64 / ((n - 2) * (m - 2)) as f64;

    let (ci, cj) = grid.center();
    let base = grid.base_loss;
    let limit = base + epsilon;
    let rings = ci.min(cj).min(n - 1 - ci).min(m - 1 - cj);
    let mut radius = 0.0;
    for r in 1..=rings {
        let ring_ok = (ci - r..=ci + r)
            .flat_map(|i| (cj - r..=cj + r).map(move |j| (i, j)))
            .filter(|&(i, j)| i.abs_diff(ci) == r || j.abs_diff(cj) == r)
            .all(|(i, j)| f[i][j] <= limit);
        if !ring_ok {
            break;
        }
        radius = (grid.alphas[ci + r] - grid.alphas[ci]).min(grid.betas[cj + r] - grid.betas[cj]);
    }

    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    Ok(CurvatureReport {
        convexity_fraction,
        flatness_radius: radius,
        loss_range: max - min,
        center_gap: mean - base,
        epsilon,
    })
}
