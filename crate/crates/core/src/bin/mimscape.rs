use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimscape::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mimscape::compare::compare_grids;
use mimscape::data::{generate_synthetic, Dataset, Split};
use mimscape::grid_io::{
    config_hash, format_loss, read_grid_csv, read_metadata, sidecar_path, write_grid_csv, write_metadata, GridMetadata,
};
use mimscape::idx::load_idx;
use mimscape::landscape::{landscape, EvalSetup, Evaluator, FilterPolicy, LossKind};
use mimscape::metrics::{curvature_report, default_epsilon};
use mimscape::render::{render_svg, RenderMode, RenderSpec};
use mimscape::reproduce::{reproduce, ReproduceConfig, EVAL_DATA_SEED_OFFSET};
use mimscape::train::{linear_probe, train, Regime, TrainConfig};
use mimscape::vit::{ViTConfig, ViTModel};
use mimscape::{Error, Result};

#[derive(Parser)]
#[command(name = "mimscape", version, about = "Tiny ViT training and loss landscape laboratory")]
struct Cli {
    /// Directory for outputs written without an explicit path.
    #[arg(long, global = true, env = "MIMSCAPE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model under one regime and write a checkpoint.
    Train(TrainArgs),
    /// Fit a linear head on a frozen encoder.
    Probe(ProbeArgs),
    /// Print the evaluation loss of a checkpoint.
    EvalLoss(EvalArgs),
    /// Evaluate a filter-normalised loss landscape around a checkpoint.
    Landscape(LandscapeArgs),
    /// Render a grid CSV as an SVG figure.
    Render(RenderArgs),
    /// Compare the curvature of two grids.
    Compare(CompareArgs),
    /// Run every regime across seeds and report the comparisons.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Images generated for training (synthetic data).
    #[arg(long, default_value_t = 512)]
    train_images: usize,
    /// Images generated for evaluation (synthetic data).
    #[arg(long, default_value_t = 256)]
    eval_images: usize,
    /// Seed of the synthetic images; defaults to the run seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// IDX image file for training, used with --train-labels.
    #[arg(long, requires = "train_labels")]
    train_idx: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// IDX image file for evaluation, used with --eval-labels.
    #[arg(long, requires = "eval_labels")]
    eval_idx: Option<PathBuf>,
    #[arg(long)]
    eval_labels: Option<PathBuf>,
}

impl DataArgs {
    fn train(&self, cfg: &ViTConfig, seed: u64) -> Result<Dataset> {
        match (&self.train_idx, &self.train_labels) {
            (Some(i), Some(l)) => load_idx(i, l, cfg, Split::Train),
            _ => generate_synthetic(
                self.train_images,
                cfg,
                cfg.num_classes,
                self.data_seed.unwrap_or(seed),
                Split::Train,
            ),
        }
    }

    fn eval(&self, cfg: &ViTConfig, seed: u64) -> Result<Dataset> {
        match (&self.eval_idx, &self.eval_labels) {
            (Some(i), Some(l)) => load_idx(i, l, cfg, Split::Eval),
            _ => {
                let s = self.data_seed.unwrap_or(seed).wrapping_add(EVAL_DATA_SEED_OFFSET);
                generate_synthetic(self.eval_images, cfg, cfg.num_classes, s, Split::Eval)
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    regime: Regime,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    consistency_weight: Option<f64>,
    /// Reconstruct per-patch normalised pixels.
    #[arg(long)]
    norm_pix_loss: bool,
    /// Model configuration as JSON; the built-in desk-scale model otherwise.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path; `<out-dir>/<regime>_seed<seed>.ckpt` by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Pretrained encoder checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss to evaluate; follows the checkpoint's regime by default.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Permit a loss that does not match the checkpoint's regime.
    #[arg(long)]
    allow_mismatch: bool,
    /// Take `head.*` from this checkpoint (a probe over the same encoder).
    #[arg(long)]
    head: Option<PathBuf>,
    /// Seed of the fixed evaluation masks.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    loss: LossArgs,
}

fn odd_resolution(s: &str) -> std::result::Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n % 2 == 1 {
        Ok(n)
    } else {
        Err(format!("{n} is even; the grid must contain the origin"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn at_least_one(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("`{s}` must be a positive integer")),
    }
}

#[derive(Args)]
struct LandscapeArgs {
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 41, value_parser = odd_resolution)]
    resolution: usize,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    half_range: f64,
    #[arg(long, default_value_t = 1, value_parser = at_least_one)]
    workers: usize,
    /// Seed of the two random directions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb biases, norm parameters and the mask token as single groups.
    #[arg(long)]
    perturb_1d: bool,
    /// Perturb only the classifier head.
    #[arg(long)]
    head_only: bool,
    /// Flatness tolerance; a tenth of the center loss by default.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Grid CSV path; the metadata is written next to it as `.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    grid: PathBuf,
    #[arg(long, default_value = "both")]
    mode: RenderMode,
    #[arg(long, default_value_t = 12)]
    levels: usize,
    /// Force a logarithmic colour and level scale.
    #[arg(long, conflicts_with = "linear")]
    log: bool,
    /// Force a linear scale.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1, value_parser = at_least_one)]
    workers: usize,
    #[arg(long, default_value_t = 41, value_parser = odd_resolution)]
    resolution: usize,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    half_range: f64,
    #[arg(long, default_value_t = 512)]
    train_images: usize,
    #[arg(long, default_value_t = 256)]
    eval_images: usize,
    #[arg(long, default_value_t = 50)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 30)]
    probe_epochs: usize,
    #[arg(long)]
    perturb_1d: bool,
    /// Output directory; `<out-dir>/reproduce` by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::RegimeMismatch { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Train(a) => cmd_train(a, &out_dir),
        Command::Probe(a) => cmd_probe(a, &out_dir),
        Command::EvalLoss(a) => cmd_eval_loss(a),
        Command::Landscape(a) => cmd_landscape(a, &out_dir),
        Command::Render(a) => cmd_render(a, &out_dir),
        Command::Compare(a) => cmd_compare(a),
        Command::Reproduce(a) => cmd_reproduce(a, &out_dir),
    }
}

fn output_path(explicit: Option<PathBuf>, out_dir: &Path, name: String) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| out_dir.join(name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn write_history(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut s = String::from("epoch,mean_loss\n");
    for (e, l) in ck.meta.loss_history.iter().enumerate() {
        s.push_str(&format!("{},{}\n", e + 1, format_loss(*l)));
    }
    fs::write(path, s)?;
    Ok(())
}

fn cmd_train(a: TrainArgs, out_dir: &Path) -> Result<()> {
    if a.regime == Regime::Probe {
        return Err(Error::Contract("use the `probe` subcommand for linear probing".into()));
    }
    let config: ViTConfig = match &a.model_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ViTConfig::default(),
    };
    let mut cfg = TrainConfig::new(a.regime, a.seed);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    cfg.weight_decay = a.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.mask_ratio = a.mask_ratio.unwrap_or(cfg.mask_ratio);
    cfg.ema_decay = a.ema_decay.unwrap_or(cfg.ema_decay);
    cfg.consistency_weight = a.consistency_weight.unwrap_or(cfg.consistency_weight);
    cfg.norm_pix_loss = a.norm_pix_loss;
    let data = a.data.train(&config, a.seed)?;
    let model = ViTModel::init(config, a.seed)?;
    let ck = train(&model, &data, &cfg)?;
    let path = output_path(a.out, out_dir, format!("{}_seed{}.ckpt", a.regime, a.seed))?;
    save_checkpoint(&ck, &path)?;
    write_history(&ck, &path.with_extension("history.csv"))?;
    match ck.meta.final_loss {
        Some(l) => println!("final loss {}", format_loss(l)),
        None => println!("final loss none (0 epochs)"),
    }
    println!("checkpoint {} sha256 {}", path.display(), ck.checksum()?);
    Ok(())
}

fn cmd_probe(a: ProbeArgs, out_dir: &Path) -> Result<()> {
    let encoder_ck = load_checkpoint(&a.checkpoint)?;
    let encoder = encoder_ck.model()?;
    let mut cfg = TrainConfig::new(Regime::Probe, a.seed);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    let data_seed = encoder_ck.meta.seed;
    let train_data = a.data.train(&encoder_ck.config, data_seed)?;
    let eval_data = a.data.eval(&encoder_ck.config, data_seed)?;
    let (mut ck, report) = linear_probe(&encoder, &train_data, &eval_data, &cfg)?;
    ck.meta.source_regime = Some(encoder_ck.meta.regime);
    let name = format!("probe_{}_seed{}.ckpt", encoder_ck.meta.regime, a.seed);
    let path = output_path(a.out, out_dir, name)?;
    save_checkpoint(&ck, &path)?;
    write_history(&ck, &path.with_extension("history.csv"))?;
    println!(
        "accuracy before {:.4} after {:.4} (train {:.4})",
        report.accuracy_before, report.accuracy_after, report.train_accuracy
    );
    println!("checkpoint {} sha256 {}", path.display(), ck.checksum()?);
    Ok(())
}

struct Prepared {
    ck: Checkpoint,
    evaluator: Evaluator,
    setup: EvalSetup,
    eval_images: usize,
}

fn prepare(a: &LossArgs) -> Result<Prepared> {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    let mut regime = ck.meta.regime;
    if let Some(h) = &a.head {
        let head = load_checkpoint(h)?;
        ck.params.check_compatible(&head.params)?;
        for (name, t) in head.params.iter().filter(|(n, _)| mimscape::vit::is_head(n)) {
            *ck.params.get_mut(name).expect("compatible") = t.clone();
        }
        regime = Regime::Probe;
    }
    let expected = LossKind::for_regime(regime);
    let loss = a.loss.unwrap_or(expected);
    if loss != expected && !a.allow_mismatch {
        return Err(Error::RegimeMismatch { checkpoint: regime.to_string(), requested: loss.to_string() });
    }
    let mut setup = EvalSetup::new(loss, a.eval_seed);
    setup.mask_ratio = a.mask_ratio.unwrap_or(ck.meta.train_config.mask_ratio);
    setup.consistency_weight = ck.meta.train_config.consistency_weight;
    setup.norm_pix_loss = ck.meta.train_config.norm_pix_loss;
    let data = a.data.eval(&ck.config, ck.meta.seed)?;
    let model = ck.model()?;
    let evaluator = Evaluator::new(&model, &data, setup.clone(), ck.teacher.as_ref())?;
    Ok(Prepared { ck, evaluator, setup, eval_images: data.len() })
}

fn cmd_eval_loss(a: EvalArgs) -> Result<()> {
    let p = prepare(&a.loss)?;
    println!("{}", format_loss(p.evaluator.loss(&p.ck.params)?));
    Ok(())
}

fn cmd_landscape(a: LandscapeArgs, out_dir: &Path) -> Result<()> {
    let p = prepare(&a.loss)?;
    let policy = FilterPolicy { perturb_1d: a.perturb_1d, head_only: a.head_only };
    let mut grid = landscape(&p.evaluator, &p.ck.params, a.seed, &policy, a.resolution, a.half_range, a.workers)?;
    let regime = match &a.loss.head {
        Some(_) => format!("{}-probe", p.ck.meta.regime),
        None => p.ck.meta.regime.to_string(),
    };
    grid.regime = regime.clone();
    let report = if a.resolution >= 5 {
        Some(curvature_report(&grid, a.epsilon.unwrap_or_else(|| default_epsilon(grid.base_loss)))?)
    } else {
        None
    };
    let name = format!("{}_{}_seed{}.csv", regime, p.setup.loss, a.seed);
    let path = output_path(a.out, out_dir, name)?;
    write_grid_csv(&grid, &path)?;
    let meta = GridMetadata {
        regime,
        loss: p.setup,
        train_seed: p.ck.meta.seed,
        direction_seed: a.seed,
        config_hash: config_hash(&p.ck.config),
        filter_policy: policy,
        filter_policy_description: policy.describe(),
        resolution: a.resolution,
        half_range: a.half_range,
        eval_images: p.eval_images,
        base_loss: grid.base_loss,
        report: report.clone(),
    };
    write_metadata(&meta, &sidecar_path(&path))?;
    println!("grid {} center loss {}", path.display(), format_loss(grid.base_loss));
    if let Some(r) = report {
        println!(
            "convexity {:.4} flatness {:.4} range {:.6} gap {:.6}",
            r.convexity_fraction, r.flatness_radius, r.loss_range, r.center_gap
        );
    }
    Ok(())
}

fn cmd_render(a: RenderArgs, out_dir: &Path) -> Result<()> {
    let mut grid = read_grid_csv(&a.grid)?;
    let meta = read_metadata(&sidecar_path(&a.grid)).ok();
    let pretraining = meta.as_ref().is_some_and(|m| m.loss.loss != LossKind::Ce);
    if let Some(m) = &meta {
        grid.regime = m.regime.clone();
    }
    let spec = RenderSpec { mode: a.mode, contour_levels: a.levels, log_scale: a.log || (pretraining && !a.linear) };
    let stem = a.grid.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "grid".into());
    let path = output_path(a.out, out_dir, format!("{stem}.svg"))?;
    fs::write(&path, render_svg(&grid, &spec)?)?;
    println!("figure {}", path.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let ga = read_grid_csv(&a.a)?;
    let gb = read_grid_csv(&a.b)?;
    let c = compare_grids(&ga, &gb, a.epsilon)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
    } else {
        let label = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        print!("{}", c.table(&label(&a.a), &label(&a.b)));
    }
    Ok(())
}

fn cmd_reproduce(a: ReproduceArgs, out_dir: &Path) -> Result<()> {
    let cfg = ReproduceConfig {
        seeds: a.seeds,
        workers: a.workers,
        resolution: a.resolution,
        half_range: a.half_range,
        train_images: a.train_images,
        eval_images: a.eval_images,
        pretrain_epochs: a.pretrain_epochs,
        probe_epochs: a.probe_epochs,
        policy: FilterPolicy { perturb_1d: a.perturb_1d, head_only: false },
        ..ReproduceConfig::default()
    };
    let dir = a.out.unwrap_or_else(|| out_dir.join("reproduce"));
    let summary = reproduce(&cfg, Some(&dir), |r| eprintln!("seed {} done in {:.1}s", r.seed, r.seconds))?;
    print!("{}", summary.table());
    println!("outputs in {}", dir.display());
    Ok(())
}
