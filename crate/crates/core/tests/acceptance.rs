//! Acceptance suite. Prints one line per criterion; criteria 1–7, 9 and 10
//! decide the exit status, criterion 8 is a soft statistical comparison that
//! is reported with its full table but never fails the run.
//!
//! `MIMSCAPE_ACCEPTANCE=1,4,9` restricts the run to the listed criteria.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mimscape::compare::compare_grids;
use mimscape::data::stack_patches;
use mimscape::grid_io::read_grid_csv;
use mimscape::idx::{dataset_to_idx, encode_idx, load_idx, parse_idx, save_idx, IdxArray};
use mimscape::landscape::coordinates;
use mimscape::render::{contour_segments, grid_segments, render_svg, RenderMode, RenderSpec};
use mimscape::reproduce::{reproduce, ReproduceConfig};
use mimscape::train::{batch_objective, draw_masks, BatchTask};
use mimscape::vit::is_head;
use mimscape::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: mimscape::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn tiny_config() -> ViTConfig {
    ViTConfig {
        image_size: 8,
        channels: 1,
        patch_size: 4,
        encoder_depth: 1,
        decoder_depth: 1,
        embed_dim: 8,
        decoder_dim: 8,
        heads: 2,
        mlp_ratio: 2,
        num_classes: 4,
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn cli(args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mimscape")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("mimscape {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn perturb(params: &ParameterSet, scale: f64, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.map(|_, t| {
        let mut t = t.clone();
        t.data_mut().iter_mut().for_each(|v| *v += scale * rng.random_range(-1.0..1.0));
        t
    })
}

// 1

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

fn fd_max_rel_error(
    params: &ParameterSet,
    objective: impl Fn(&ParameterSet) -> mimscape::Result<(f64, ParameterSet)>,
    trainable: impl Fn(&str) -> bool,
) -> std::result::Result<(f64, usize), String> {
    let (loss, grads) = lib(objective(params))?;
    // Central differences carry roundoff of order eps·|loss|/h.
    let floor = FD_FLOOR * loss.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, t) in params.iter() {
        let g = grads.get(name).ok_or_else(|| format!("no gradient for {name}"))?;
        for i in 0..t.len() {
            let analytic = g.data()[i];
            if !trainable(name) {
                check(analytic == 0.0, || format!("{name}[{i}] is frozen but has gradient {analytic}"))?;
                continue;
            }
            let mut shifted = params.clone();
            shifted.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let up = lib(objective(&shifted))?.0;
            shifted.get_mut(name).unwrap().data_mut()[i] -= 2.0 * FD_STEP;
            let down = lib(objective(&shifted))?.0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((worst, checked))
}

fn criterion_1() -> Outcome {
    let cfg = tiny_config();
    let model = lib(ViTModel::init(cfg.clone(), 11))?;
    let n_params = model.params().numel();
    check(n_params <= 2000, || format!("model has {n_params} parameters"))?;
    let data = lib(generate_synthetic(4, &cfg, cfg.num_classes, 5, Split::Train))?;
    let all = lib(data.patchify_all(&cfg))?;
    let patches = lib(stack_patches(&all, &[0, 1, 2, 3]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let masks = lib(draw_masks(4, cfg.n_patches(), 0.5, &mut rng))?;
    // Trained-looking weights: keep LayerNorm gains away from their init.
    let params = perturb(model.params(), 0.3, 17);
    let teacher = perturb(&params, 0.1, 19);

    let mut lines = Vec::new();
    let mut worst_all = 0.0f64;
    for regime in ["supervised", "mae", "rcmae", "probe"] {
        let trainable = |n: &str| regime != "probe" || is_head(n);
        let objective = |p: &ParameterSet| {
            let task = match regime {
                "supervised" | "probe" => BatchTask::Classify { labels: data.labels() },
                "mae" => BatchTask::Reconstruct { targets: &patches, masks: &masks, teacher: None },
                _ => BatchTask::Reconstruct { targets: &patches, masks: &masks, teacher: Some((&teacher, 1.0)) },
            };
            batch_objective(&model, p, &patches, task, trainable).map(|o| (o.loss, o.gradients))
        };
        let (worst, checked) = fd_max_rel_error(&params, objective, trainable)?;
        worst_all = worst_all.max(worst);
        lines.push(format!("{regime} {worst:.2e} over {checked}"));
    }
    check(worst_all < 1e-4, || format!("max relative error {worst_all:.3e} >= 1e-4 ({})", lines.join(", ")))?;
    Ok(format!("{n_params} params; max rel err: {}", lines.join(", ")))
}

// 2

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(-2.0..2.0))
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> MaskSpec {
    let ratio = rng.random_range(0.05..0.95);
    let mut mask = sample_mask(n, ratio, rng).unwrap();
    if mask.masked().is_empty() {
        mask = MaskSpec::from_masked(n, vec![rng.random_range(0..n)]).unwrap();
    }
    mask
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let n = rng.random_range(2..=32);
        let d = rng.random_range(1..=12);
        let targets = random_tensor(&mut rng, n, d);
        let preds = random_tensor(&mut rng, n, d);
        let mask = random_mask(&mut rng, n);
        let before = lib(mae_loss(&targets, &preds, &mask))?;
        let (mut t2, mut p2) = (targets.clone(), preds.clone());
        for &v in mask.visible() {
            for j in 0..d {
                t2.data_mut()[v * d + j] += rng.random_range(-100.0..100.0);
                p2.data_mut()[v * d + j] = rng.random_range(-1e6..1e6);
            }
        }
        let after = lib(mae_loss(&t2, &p2, &mask))?;
        check(before.to_bits() == after.to_bits(), || {
            format!("trial {trial}: {before:e} became {after:e} after touching visible patches")
        })?;
    }
    Ok("1000 trials bitwise invariant".into())
}

// 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let n = rng.random_range(2..=32);
        let d = rng.random_range(1..=12);
        let targets = random_tensor(&mut rng, n, d);
        let preds = random_tensor(&mut rng, n, d);
        let mask = random_mask(&mut rng, n);
        let mae = lib(mae_loss(&targets, &preds, &mask))?;
        let rc = lib(rc_mae_loss(&targets, &preds, &preds.clone(), &mask))?;
        check(mae.to_bits() == rc.to_bits(), || format!("trial {trial}: rc_mae {rc:e} != mae {mae:e}"))?;
    }

    let cfg = tiny_config();
    let model = lib(ViTModel::init(cfg.clone(), 23))?;
    let data = lib(generate_synthetic(96, &cfg, cfg.num_classes, 23, Split::Train))?;
    let base = |regime| TrainConfig { epochs: 5, batch_size: 16, ..TrainConfig::new(regime, 23) };
    let mae = lib(train(&model, &data, &base(Regime::Mae)))?;
    let rc_cfg = TrainConfig { consistency_weight: 0.0, ..base(Regime::Rcmae) };
    let rc = lib(train(&model, &data, &rc_cfg))?;
    let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&mae.meta.loss_history) == bits(&rc.meta.loss_history), || {
        format!("loss histories differ: {:?} vs {:?}", mae.meta.loss_history, rc.meta.loss_history)
    })?;
    check(mae.params == rc.params, || "final weights differ".into())?;
    for epochs in 1..5 {
        let a = lib(train(&model, &data, &TrainConfig { epochs, ..base(Regime::Mae) }))?;
        let b = lib(train(&model, &data, &TrainConfig { epochs, ..rc_cfg.clone() }))?;
        check(a.params == b.params, || format!("weights differ after epoch {epochs}"))?;
    }
    Ok("1000 loss trials bitwise; 5-epoch trajectories identical".into())
}

// 4

fn random_params(rng: &mut ChaCha8Rng) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.insert("w", Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0)));
    p.insert("b", Tensor::from_fn(&[5], |_| rng.random_range(-1.0..1.0)));
    p.insert("m", Tensor::from_fn(&[2, 2, 2], |_| rng.random_range(-1.0..1.0)));
    p
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let initial = random_params(&mut rng);
    let students: Vec<ParameterSet> = (0..100).map(|_| random_params(&mut rng)).collect();
    let mut worst = 0.0f64;
    for decay in [0.5, 0.9, 0.996, 0.999, rng.random_range(0.0..1.0)] {
        let mut teacher = lib(EmaTeacher::new(&initial, decay))?;
        for (t, s) in students.iter().enumerate() {
            teacher = lib(ema_update(&teacher, s))?;
            let closed = lib(ema_closed_form(&students[..=t], &initial, decay))?;
            worst = worst.max(teacher.params().max_abs_diff(&closed));
        }
    }
    check(worst <= 1e-10, || format!("chained vs closed form differ by {worst:e}"))?;
    for (decay, expect) in [(0.0, students.last().unwrap()), (1.0, &initial)] {
        let mut teacher = lib(EmaTeacher::new(&initial, decay))?;
        for s in &students {
            lib(teacher.update(s))?;
        }
        check(teacher.params() == expect, || format!("decay {decay} chained result is not exact"))?;
        let closed = lib(ema_closed_form(&students, &initial, decay))?;
        check(&closed == expect, || format!("decay {decay} closed form is not exact"))?;
    }
    Ok(format!("max deviation {worst:.2e}; decay 0 and 1 exact"))
}

// 5

fn oracle_groups(name: &str, shape: &[usize], perturb_1d: bool, head_only: bool) -> Vec<(usize, usize)> {
    if head_only && !name.starts_with("head.") {
        return Vec::new();
    }
    match shape.len() {
        1 if perturb_1d => vec![(0, shape[0])],
        2 => (0..shape[0]).map(|r| (r * shape[1], (r + 1) * shape[1])).collect(),
        _ => Vec::new(),
    }
}

fn criterion_5() -> Outcome {
    let model = lib(ViTModel::init(ViTConfig::default(), 5))?;
    // Nonzero biases so the 1-D policy has something to match.
    let params = perturb(model.params(), 0.05, 55);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for perturb_1d in [false, true] {
        for head_only in [false, true] {
            let policy = FilterPolicy { perturb_1d, head_only };
            for seed in 0..4 {
                let dirs = lib(sample_directions(&params, seed).normalize(&params, &policy))?;
                for d in [&dirs.delta, &dirs.eta] {
                    for (name, theta) in params.iter() {
                        let dt = d.get(name).unwrap();
                        let groups = oracle_groups(name, theta.shape(), perturb_1d, head_only);
                        let mut covered = vec![false; theta.len()];
                        for (lo, hi) in groups {
                            let g = lo..hi;
                            let tn = theta.data()[g.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                            let dn = dt.data()[g.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                            worst = worst.max((tn - dn).abs());
                            covered[g].iter_mut().for_each(|c| *c = true);
                            checked += 1;
                        }
                        for (i, c) in covered.iter().enumerate() {
                            if !c {
                                check(dt.data()[i] == 0.0, || format!("{name}[{i}] frozen but {}", dt.data()[i]))?;
                            }
                        }
                    }
                }
            }
        }
    }
    check(worst <= 1e-10, || format!("group norm mismatch {worst:e}"))?;
    Ok(format!("{checked} groups, max norm gap {worst:.2e}; frozen groups zero"))
}

// 6

fn criterion_6() -> Outcome {
    let cfg = tiny_config();
    let init = lib(ViTModel::init(cfg.clone(), 6))?;
    let data = lib(generate_synthetic(64, &cfg, cfg.num_classes, 6, Split::Train))?;
    let eval = lib(generate_synthetic(48, &cfg, cfg.num_classes, 60, Split::Eval))?;
    let quick = |regime| TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::new(regime, 6) };
    let sup = lib(train(&init, &data, &quick(Regime::Supervised)))?;
    let mae = lib(train(&init, &data, &quick(Regime::Mae)))?;
    let rc = lib(train(&init, &data, &quick(Regime::Rcmae)))?;
    let (probe, _) = lib(linear_probe(&lib(mae.model())?, &data, &eval, &quick(Regime::Probe)))?;
    let mut notes = Vec::new();
    for (name, ck, loss) in [
        ("supervised", &sup, LossKind::Ce),
        ("mae", &mae, LossKind::Mae),
        ("rcmae", &rc, LossKind::Rcmae),
        ("probe", &probe, LossKind::Ce),
    ] {
        let model = lib(ck.model())?;
        let teacher = if loss == LossKind::Rcmae { ck.teacher.as_ref() } else { None };
        let ev = lib(Evaluator::new(&model, &eval, EvalSetup::new(loss, 9), teacher))?;
        let standalone = lib(ev.loss(&ck.params))?;
        let policy = FilterPolicy { head_only: name == "probe", ..FilterPolicy::default() };
        for (res, workers) in [(5, 1), (7, 3)] {
            let dirs = lib(sample_directions(&ck.params, 4).normalize(&ck.params, &policy))?;
            let grid = lib(evaluate_grid(&ev, &ck.params, &dirs, res, 0.5, workers))?;
            let (ci, cj) = grid.center();
            let center = grid.losses[ci][cj];
            check(center.to_bits() == standalone.to_bits(), || {
                format!("{name}: center {center:e} != standalone {standalone:e}")
            })?;
        }
        notes.push(name);
    }

    let dir = scratch("center");
    let d = dir.to_str().unwrap();
    let small = ["--train-images", "64", "--eval-images", "32"];
    for regime in ["supervised", "mae", "rcmae"] {
        let ck = format!("{d}/{regime}.ckpt");
        cli(&[&["train", "--regime", regime, "--epochs", "1", "--out", &ck][..], &small].concat())?;
    }
    let probe_ck = format!("{d}/probe.ckpt");
    cli(&[&["probe", "--checkpoint", &format!("{d}/mae.ckpt"), "--epochs", "2", "--out", &probe_ck][..], &small]
        .concat())?;
    for name in ["supervised", "mae", "rcmae", "probe"] {
        let ck = format!("{d}/{name}.ckpt");
        let csv = format!("{d}/{name}.csv");
        let single = cli(&[&["eval-loss", "--checkpoint", &ck][..], &small].concat())?;
        cli(&[&["landscape", "--checkpoint", &ck, "--resolution", "5", "--out", &csv][..], &small].concat())?;
        let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
        let center = text
            .lines()
            .find_map(|l| l.strip_prefix("0,0,"))
            .ok_or_else(|| format!("{name}: no origin row in {csv}"))?;
        check(center == single.trim(), || format!("{name} via cli: grid {center} vs eval-loss {}", single.trim()))?;
    }
    Ok(format!("bitwise for {} in library and cli", notes.join(", ")))
}

// 7

fn criterion_7() -> Outcome {
    let dir = scratch("workers");
    let d = dir.to_str().unwrap();
    let small = ["--train-images", "128", "--eval-images", "64"];
    let mut sizes = Vec::new();
    for regime in ["supervised", "rcmae"] {
        let ck = format!("{d}/{regime}.ckpt");
        cli(&[&["train", "--regime", regime, "--epochs", "2", "--out", &ck][..], &small].concat())?;
        let mut csvs = Vec::new();
        for workers in ["1", "8"] {
            let csv = format!("{d}/{regime}_w{workers}.csv");
            cli(&[
                &["landscape", "--checkpoint", &ck, "--resolution", "21", "--workers", workers, "--out", &csv][..],
                &small,
            ]
            .concat())?;
            csvs.push(std::fs::read(&csv).map_err(|e| e.to_string())?);
        }
        check(csvs[0] == csvs[1], || format!("{regime}: worker counts produce different CSV bytes"))?;
        check(csvs[0].iter().filter(|&&b| b == b'\n').count() == 442, || format!("{regime}: not a 21x21 grid"))?;
        sizes.push(format!("{regime} {} bytes", csvs[0].len()));
    }
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

// 8

fn criterion_8() -> Outcome {
    let cfg = ReproduceConfig::default();
    let out = scratch("reproduce");
    let start = Instant::now();
    let summary = lib(reproduce(&cfg, Some(&out), |r| {
        println!("    seed {} done in {:.0}s", r.seed, r.seconds);
    }))?;
    let elapsed = start.elapsed();
    for line in summary.table().lines() {
        println!("    {line}");
    }
    println!("    outputs in {}", out.display());
    if summary.seeds.iter().any(|r| r.seed == 0) {
        let mae = lib(read_grid_csv(&out.join("seed0_mae.csv")))?;
        let rc = lib(read_grid_csv(&out.join("seed0_rcmae.csv")))?;
        let cmp = lib(compare_grids(&mae, &rc, None))?;
        for line in cmp.table("mae", "rcmae").lines() {
            println!("    {line}");
        }
        let d = cmp.delta.convexity_fraction;
        println!("    seed 0 rcmae - mae convexity delta {d:+.4} (recorded sign: negative)");
        check(d < 0.0, || format!("seed 0 convexity delta {d:+.4} changed sign from the recorded negative"))?;
    }
    let budget = Duration::from_secs(45 * 60);
    let verdict = format!(
        "convexity {} ({}/{}), flatness {} ({}/{}), {:.0}s of {}s",
        if summary.convexity_pass { "PASS" } else { "FAIL" },
        summary.rcmae_convexity_wins,
        summary.seeds.len(),
        if summary.flatness_pass { "PASS" } else { "FAIL" },
        summary.probe_flatness_wins,
        summary.seeds.len(),
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    if summary.convexity_pass && summary.flatness_pass && elapsed < budget {
        Ok(verdict)
    } else {
        Err(verdict)
    }
}

// 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = scratch("roundtrip");
    for case in 0..100 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let cfg = ViTConfig {
            image_size: [4, 8, 12][rng.random_range(0..3)],
            channels: rng.random_range(1..=3),
            patch_size: 4,
            encoder_depth: rng.random_range(0..=2),
            decoder_depth: rng.random_range(0..=1),
            embed_dim: 4 * heads * rng.random_range(1..=2),
            decoder_dim: 4 * heads,
            heads,
            mlp_ratio: rng.random_range(1..=2),
            num_classes: rng.random_range(1..=9),
        };
        let model = lib(ViTModel::init(cfg.clone(), rng.random()))?;
        let regime = [Regime::Supervised, Regime::Mae, Regime::Rcmae, Regime::Probe][rng.random_range(0..4)];
        let history: Vec<f64> = (0..rng.random_range(0..6)).map(|_| rng.random_range(-1e3..1e3)).collect();
        let mut meta = TrainingMeta::new(TrainConfig::new(regime, rng.random()), history);
        meta.probe_accuracy = rng.random_bool(0.5).then(|| rng.random());
        let params = perturb(model.params(), rng.random_range(0.0..10.0), rng.random());
        let teacher = (regime == Regime::Rcmae).then(|| perturb(&params, 1e-3, rng.random()));
        let ck = Checkpoint { config: cfg.clone(), params, teacher, meta };
        let path = dir.join(format!("case{case}.ckpt"));
        lib(save_checkpoint(&ck, &path))?;
        let back = lib(load_checkpoint(&path))?;
        check(back.params == ck.params && back.teacher == ck.teacher, || format!("case {case}: weights differ"))?;
        check(back.meta == ck.meta && back.config == ck.config, || format!("case {case}: metadata differs"))?;
        check(lib(back.to_bytes())? == lib(ck.to_bytes())?, || format!("case {case}: bytes differ"))?;

        let n = rng.random_range(1..=12);
        let images: Vec<Tensor> = (0..n)
            .map(|_| Tensor::from_fn(&cfg.image_shape(), |_| rng.random_range(0..=255u8) as f64 / 255.0))
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.num_classes)).collect();
        let data = lib(Dataset::new(images, labels, cfg.num_classes, Split::Train))?;
        let (img_path, lbl_path) = (dir.join(format!("case{case}.idx3")), dir.join(format!("case{case}.idx1")));
        lib(save_idx(&data, &img_path, &lbl_path))?;
        let loaded = lib(load_idx(&img_path, &lbl_path, &cfg, Split::Train))?;
        check(loaded.labels() == data.labels(), || format!("case {case}: labels differ"))?;
        check(loaded.images() == data.images(), || format!("case {case}: pixels differ"))?;

        let rank = rng.random_range(1..=4);
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=5)).collect();
        let raw = IdxArray { data: (0..dims.iter().product()).map(|_| rng.random()).collect(), dims };
        check(lib(parse_idx(&encode_idx(&raw)))? == raw, || format!("case {case}: raw idx array differs"))?;
        let (a, b) = lib(dataset_to_idx(&loaded))?;
        let (c, e) = lib(dataset_to_idx(&data))?;
        check(a == c && b == e, || format!("case {case}: re-encoded arrays differ"))?;
    }
    Ok("100 checkpoint and 100 idx cases bit-exact".into())
}

// 10

fn criterion_10() -> Outcome {
    let constant = lib(LandscapeGrid::from_fn(21, 1.0, |_, _| 2.5))?;
    for mode in [RenderMode::Contour, RenderMode::Both] {
        for log_scale in [false, true] {
            let spec = RenderSpec { mode, contour_levels: 12, log_scale };
            let segs = lib(grid_segments(&constant, &spec))?;
            check(segs.is_empty(), || format!("constant grid gave {} segments", segs.len()))?;
        }
    }

    let alphas = lib(coordinates(31, 1.5))?;
    let mut count = 0;
    for (ca, cb) in [(1.0, 0.0), (0.0, -2.0), (0.7, 0.0), (0.0, 3.0)] {
        let values: Vec<Vec<f64>> =
            alphas.iter().map(|&a| alphas.iter().map(|&b| ca * a + cb * b + 4.0).collect()).collect();
        let levels: Vec<f64> = (1..=9).map(|k| 4.0 + (ca + cb) * (k as f64 * 0.29 - 1.4)).collect();
        let segs = contour_segments(&alphas, &alphas, &values, &levels);
        check(!segs.is_empty(), || "linear field produced no segments".into())?;
        for (k, level) in levels.iter().enumerate() {
            let of_level: Vec<_> = segs.iter().filter(|s| s.level == k).collect();
            let varying = |p: (f64, f64)| if ca != 0.0 { p.0 } else { p.1 };
            let first = varying(of_level[0].from);
            for s in &of_level {
                for p in [s.from, s.to] {
                    check((varying(p) - first).abs() <= 1e-9, || {
                        format!("level {level}: endpoint {p:?} leaves the iso-line at {first}")
                    })?;
                }
            }
            count += of_level.len();
        }
    }

    let mut grid = lib(LandscapeGrid::from_fn(21, 1.0, |a, b| (a * a + 2.0 * b * b + a * b).exp()))?;
    grid.losses[0][3] = f64::INFINITY;
    grid.regime = "mae".into();
    for mode in [RenderMode::Contour, RenderMode::Heatmap, RenderMode::Both] {
        for log_scale in [false, true] {
            let spec = RenderSpec { mode, contour_levels: 10, log_scale };
            let a = lib(render_svg(&grid, &spec))?;
            let b = lib(render_svg(&grid.clone(), &spec))?;
            check(a == b, || format!("{mode:?} log={log_scale}: repeated render differs"))?;
        }
    }
    Ok(format!("constant: 0 segments; {count} iso-line segments straight; renders byte-identical"))
}

struct Criterion {
    id: u32,
    budget: Duration,
    soft: bool,
    run: fn() -> Outcome,
}

fn main() {
    let selected: Option<Vec<u32>> =
        std::env::var("MIMSCAPE_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, budget: secs(60), soft: false, run: criterion_1 },
        Criterion { id: 2, budget: secs(5), soft: false, run: criterion_2 },
        Criterion { id: 3, budget: secs(120), soft: false, run: criterion_3 },
        Criterion { id: 4, budget: secs(5), soft: false, run: criterion_4 },
        Criterion { id: 5, budget: secs(5), soft: false, run: criterion_5 },
        Criterion { id: 6, budget: secs(120), soft: false, run: criterion_6 },
        Criterion { id: 7, budget: secs(300), soft: false, run: criterion_7 },
        Criterion { id: 8, budget: secs(45 * 60), soft: true, run: criterion_8 },
        Criterion { id: 9, budget: secs(10), soft: false, run: criterion_9 },
        Criterion { id: 10, budget: secs(5), soft: false, run: criterion_10 },
    ];
    let mut hard_failures = Vec::new();
    for c in &criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let over = took > c.budget;
        let (status, detail) = match &outcome {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("over budget; {d}")),
            Err(e) => ("FAIL", e.clone()),
        };
        let soft = if c.soft { " (soft)" } else { "" };
        println!(
            "criterion {:>2}: {status}{soft} [{:.1}s / {}s] {detail}",
            c.id,
            took.as_secs_f64(),
            c.budget.as_secs()
        );
        if status == "FAIL" && !c.soft {
            hard_failures.push(c.id);
        }
    }
    if !hard_failures.is_empty() {
        println!("failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
