//! Landscape grid persistence: `alpha,beta,loss` CSV plus a JSON sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::landscape::{EvalSetup, FilterPolicy, LandscapeGrid};
use crate::metrics::CurvatureReport;
use crate::vit::ViTConfig;

pub const CSV_HEADER: &str = "alpha,beta,loss";

/// Loss formatted the way grid CSVs and `eval-loss` print it: shortest
/// round-trip decimal, `inf` for the overflow sentinel.
pub fn format_loss(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "inf".to_string()
    }
}

/// One row per grid point, alpha-major.
pub fn grid_to_csv(grid: &LandscapeGrid) -> String {
    let mut out = String::with_capacity(32 * grid.alphas.len() * grid.betas.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, a) in grid.alphas.iter().enumerate() {
        for (j, b) in grid.betas.iter().enumerate() {
            let _ = writeln!(out, "{a},{b},{}", format_loss(grid.losses[i][j]));
        }
    }
    out
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn grid_from_csv(text: &str) -> Result<LandscapeGrid> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format { offset: 0, message: format!("expected header `{CSV_HEADER}`") });
    }
    let mut rows = Vec::new();
    let mut offset = CSV_HEADER.len() as u64 + 1;
    for line in lines {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Format { offset, message: format!("bad number `{s}`") })
        };
        match fields.as_slice() {
            [""] => {}
            [a, b, l] => rows.push((parse(a)?, parse(b)?, parse(l)?)),
            _ => return Err(Error::Format { offset, message: "expected three columns".into() }),
        }
        offset += line.len() as u64 + 1;
    }
    let alphas = sorted_unique(rows.iter().map(|r| r.0).collect());
    let betas = sorted_unique(rows.iter().map(|r| r.1).collect());
    if alphas.is_empty() || rows.len() != alphas.len() * betas.len() {
        return Err(contract("grid CSV is not a full rectangular grid"));
    }
    let mut losses = vec![vec![f64::NAN; betas.len()]; alphas.len()];
    for (a, b, l) in rows {
        let i = alphas.partition_point(|&x| x < a);
        let j = betas.partition_point(|&x| x < b);
        if !losses[i][j].is_nan() {
            return Err(contract(format!("duplicate grid point ({a}, {b})")));
        }
        losses[i][j] = if l.is_finite() { l } else { f64::INFINITY };
    }
    let ci = alphas.iter().position(|&a| a == 0.0);
    let cj = betas.iter().position(|&b| b == 0.0);
    let (Some(ci), Some(cj)) = (ci, cj) else {
        return Err(contract("grid does not contain the origin"));
    };
    Ok(LandscapeGrid { base_loss: losses[ci][cj], alphas, betas, losses, regime: String::new(), direction_seed: 0 })
}

pub fn write_grid_csv(grid: &LandscapeGrid, path: &Path) -> Result<()> {
    fs::write(path, grid_to_csv(grid))?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<LandscapeGrid> {
    grid_from_csv(&fs::read_to_string(path)?)
}

/// Short stable fingerprint of a model configuration.
pub fn config_hash(config: &ViTConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    crate::hex(&Sha256::digest(json)[..8])
}

/// Everything needed to interpret a grid CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub regime: String,
    pub loss: EvalSetup,
    pub train_seed: u64,
    pub direction_seed: u64,
    pub config_hash: String,
    pub filter_policy: FilterPolicy,
    pub filter_policy_description: String,
    pub resolution: usize,
    pub half_range: f64,
    pub eval_images: usize,
    pub base_loss: f64,
    pub report: Option<CurvatureReport>,
}

/// `grid.csv` → `grid.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_metadata(meta: &GridMetadata, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<GridMetadata> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
