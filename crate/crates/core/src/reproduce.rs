//! End-to-end multi-seed experiment: train every regime, draw landscapes,
//! and compare curvature between RC-MAE and MAE and between an MAE linear
//! probe and a supervised model trained from scratch.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{generate_synthetic, Dataset, Split};
use crate::error::{contract, Result};
use crate::grid_io::{config_hash, write_grid_csv, write_metadata, GridMetadata};
use crate::landscape::{landscape, EvalSetup, Evaluator, FilterPolicy, LandscapeGrid, LossKind};
use crate::metrics::{curvature_report, default_epsilon, CurvatureReport};
use crate::render::{render_svg, RenderSpec};
use crate::train::{linear_probe, train, Regime, TrainConfig};
use crate::vit::{ViTConfig, ViTModel};

/// Offset between a run seed and the seed of its held-out images.
pub const EVAL_DATA_SEED_OFFSET: u64 = 1_000_003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceConfig {
    pub seeds: Vec<u64>,
    pub model: ViTConfig,
    pub train_images: usize,
    pub eval_images: usize,
    pub pretrain_epochs: usize,
    pub probe_epochs: usize,
    pub resolution: usize,
    pub half_range: f64,
    pub workers: usize,
    pub policy: FilterPolicy,
    /// Seeds the shared per-image evaluation masks.
    pub eval_seed: u64,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            model: ViTConfig::default(),
            train_images: 512,
            eval_images: 256,
            pretrain_epochs: 50,
            probe_epochs: 30,
            resolution: 41,
            half_range: 1.0,
            workers: 1,
            policy: FilterPolicy::default(),
            eval_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub regime: String,
    pub loss: LossKind,
    pub final_train_loss: Option<f64>,
    pub base_loss: f64,
    pub report: CurvatureReport,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub supervised: RunResult,
    pub mae: RunResult,
    pub rcmae: RunResult,
    pub mae_probe: RunResult,
    pub seconds: f64,
}

impl SeedResult {
    pub fn rcmae_convexity_wins(&self) -> bool {
        self.rcmae.report.convexity_fraction >= self.mae.report.convexity_fraction
    }

    pub fn probe_flatness_wins(&self) -> bool {
        self.mae_probe.report.flatness_radius >= self.supervised.report.flatness_radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub config: ReproduceConfig,
    pub seeds: Vec<SeedResult>,
    /// Seeds where RC-MAE convexity fraction ≥ MAE convexity fraction.
    pub rcmae_convexity_wins: usize,
    /// Seeds where MAE-probe flatness radius ≥ supervised flatness radius.
    pub probe_flatness_wins: usize,
    pub required_wins: usize,
    pub convexity_pass: bool,
    pub flatness_pass: bool,
}

impl ReproduceSummary {
    pub fn from_seeds(config: ReproduceConfig, seeds: Vec<SeedResult>) -> Self {
        let rc = seeds.iter().filter(|s| s.rcmae_convexity_wins()).count();
        let fl = seeds.iter().filter(|s| s.probe_flatness_wins()).count();
        let required = seeds.len() / 2 + 1;
        Self {
            config,
            rcmae_convexity_wins: rc,
            probe_flatness_wins: fl,
            required_wins: required,
            convexity_pass: rc >= required,
            flatness_pass: fl >= required,
            seeds,
        }
    }

    /// Fixed-width comparison table, one row per seed plus a verdict line
    /// per comparison.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>6} | {:>10} {:>10} {:>3} | {:>10} {:>10} {:>3} | {:>8} {:>8}\n",
            "seed", "mae cvx", "rcmae cvx", "win", "sup flat", "probe flat", "win", "sup acc", "probe acc"
        );
        let mark = |b: bool| if b { "yes" } else { "no" };
        for r in &self.seeds {
            s.push_str(&format!(
                "{:>6} | {:>10.4} {:>10.4} {:>3} | {:>10.4} {:>10.4} {:>3} | {:>8.3} {:>8.3}\n",
                r.seed,
                r.mae.report.convexity_fraction,
                r.rcmae.report.convexity_fraction,
                mark(r.rcmae_convexity_wins()),
                r.supervised.report.flatness_radius,
                r.mae_probe.report.flatness_radius,
                mark(r.probe_flatness_wins()),
                r.supervised.accuracy.unwrap_or(f64::NAN),
                r.mae_probe.accuracy.unwrap_or(f64::NAN),
            ));
        }
        let n = self.seeds.len();
        s.push_str(&format!(
            "rcmae convexity >= mae: {}/{n} (need {}) {}\n",
            self.rcmae_convexity_wins,
            self.required_wins,
            if self.convexity_pass { "PASS" } else { "FAIL" }
        ));
        s.push_str(&format!(
            "mae-probe flatness >= supervised: {}/{n} (need {}) {}\n",
            self.probe_flatness_wins,
            self.required_wins,
            if self.flatness_pass { "PASS" } else { "FAIL" }
        ));
        s
    }
}

struct Datasets {
    train: Dataset,
    eval: Dataset,
}

fn datasets(cfg: &ReproduceConfig, seed: u64) -> Result<Datasets> {
    let k = cfg.model.num_classes;
    Ok(Datasets {
        train: generate_synthetic(cfg.train_images, &cfg.model, k, seed, Split::Train)?,
        eval: generate_synthetic(
            cfg.eval_images,
            &cfg.model,
            k,
            seed.wrapping_add(EVAL_DATA_SEED_OFFSET),
            Split::Eval,
        )?,
    })
}

struct Landscape<'a> {
    name: &'a str,
    ck: &'a Checkpoint,
    loss: LossKind,
    accuracy: Option<f64>,
}

fn run_landscape(
    cfg: &ReproduceConfig,
    seed: u64,
    data: &Datasets,
    job: Landscape<'_>,
    out: Option<&Path>,
) -> Result<RunResult> {
    let model = job.ck.model()?;
    let setup = EvalSetup::new(job.loss, cfg.eval_seed);
    let teacher = if job.loss == LossKind::Rcmae { job.ck.teacher.as_ref() } else { None };
    let evaluator = Evaluator::new(&model, &data.eval, setup.clone(), teacher)?;
    let mut grid =
        landscape(&evaluator, &job.ck.params, seed, &cfg.policy, cfg.resolution, cfg.half_range, cfg.workers)?;
    grid.regime = job.name.to_string();
    let report = curvature_report(&grid, default_epsilon(grid.base_loss))?;
    if let Some(dir) = out {
        write_outputs(cfg, seed, &grid, &report, setup, dir, job.name)?;
    }
    Ok(RunResult {
        regime: job.name.to_string(),
        loss: job.loss,
        final_train_loss: job.ck.meta.final_loss,
        base_loss: grid.base_loss,
        report,
        accuracy: job.accuracy,
    })
}

fn write_outputs(
    cfg: &ReproduceConfig,
    seed: u64,
    grid: &LandscapeGrid,
    report: &CurvatureReport,
    setup: EvalSetup,
    dir: &Path,
    name: &str,
) -> Result<()> {
    let stem = dir.join(format!("seed{seed}_{name}"));
    write_grid_csv(grid, &stem.with_extension("csv"))?;
    write_metadata(
        &GridMetadata {
            regime: name.to_string(),
            loss: setup,
            train_seed: seed,
            direction_seed: grid.direction_seed,
            config_hash: config_hash(&cfg.model),
            filter_policy: cfg.policy,
            filter_policy_description: cfg.policy.describe(),
            resolution: cfg.resolution,
            half_range: cfg.half_range,
            eval_images: cfg.eval_images,
            base_loss: grid.base_loss,
            report: Some(report.clone()),
        },
        &stem.with_extension("json"),
    )?;
    let spec = RenderSpec { log_scale: name == "mae" || name == "rcmae", ..RenderSpec::default() };
    fs::write(stem.with_extension("svg"), render_svg(grid, &spec)?)?;
    Ok(())
}

/// Trains all regimes at one seed and evaluates their landscapes.
pub fn run_seed(cfg: &ReproduceConfig, seed: u64, out: Option<&Path>) -> Result<SeedResult> {
    let start = Instant::now();
    let data = datasets(cfg, seed)?;
    let init = ViTModel::init(cfg.model.clone(), seed)?;
    let regime_cfg = |regime| TrainConfig { epochs: cfg.pretrain_epochs, ..TrainConfig::new(regime, seed) };

    let supervised = train(&init, &data.train, &regime_cfg(Regime::Supervised))?;
    let sup_acc = crate::train::evaluate_accuracy(&supervised.model()?, &data.eval)?;
    let mae = train(&init, &data.train, &regime_cfg(Regime::Mae))?;
    let rcmae = train(&init, &data.train, &regime_cfg(Regime::Rcmae))?;
    let probe_cfg = TrainConfig { epochs: cfg.probe_epochs, ..TrainConfig::new(Regime::Probe, seed) };
    let (mut probe, probe_report) = linear_probe(&mae.model()?, &data.train, &data.eval, &probe_cfg)?;
    probe.meta.source_regime = Some(Regime::Mae);

    if let Some(dir) = out {
        for (name, ck) in [("supervised", &supervised), ("mae", &mae), ("rcmae", &rcmae), ("mae_probe", &probe)] {
            save_checkpoint(ck, &dir.join(format!("seed{seed}_{name}.ckpt")))?;
        }
    }

    let job = |name, ck, loss, accuracy| Landscape { name, ck, loss, accuracy };
    Ok(SeedResult {
        seed,
        supervised: run_landscape(cfg, seed, &data, job("supervised", &supervised, LossKind::Ce, Some(sup_acc)), out)?,
        mae: run_landscape(cfg, seed, &data, job("mae", &mae, LossKind::Mae, None), out)?,
        rcmae: run_landscape(cfg, seed, &data, job("rcmae", &rcmae, LossKind::Rcmae, None), out)?,
        mae_probe: run_landscape(
            cfg,
            seed,
            &data,
            job("mae_probe", &probe, LossKind::Ce, Some(probe_report.accuracy_after)),
            out,
        )?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every configured seed. With `out`, checkpoints, grids, metadata,
/// figures, `summary.json` and `summary.txt` are written there.
pub fn reproduce(
    cfg: &ReproduceConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&SeedResult),
) -> Result<ReproduceSummary> {
    if cfg.seeds.is_empty() {
        return Err(contract("reproduce needs at least one seed"));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let r = run_seed(cfg, seed, out)?;
        progress(&r);
        results.push(r);
    }
    let summary = ReproduceSummary::from_seeds(cfg.clone(), results);
    if let Some(dir) = out {
        let mut json = serde_json::to_string_pretty(&summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        fs::write(dir.join("summary.txt"), summary.table())?;
    }
    Ok(summary)
}
