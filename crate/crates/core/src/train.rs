//! Optimisation loops: supervised classification from scratch, masked
//! reconstruction pretraining with and without an EMA teacher, and linear
//! probing on frozen features.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy_row, Tape};
use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::data::{stack_patches, Dataset};
use crate::error::{contract, Error, Result};
use crate::mim::{normalize_patches, sample_mask, EmaTeacher, MaskSpec};
use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::vit::{is_head, Bound, ViTModel};
use crate::{rng_stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supervised,
    Mae,
    Rcmae,
    Probe,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::Mae => "mae",
            Regime::Rcmae => "rcmae",
            Regime::Probe => "probe",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Regime::Supervised),
            "mae" => Ok(Regime::Mae),
            "rcmae" => Ok(Regime::Rcmae),
            "probe" => Ok(Regime::Probe),
            other => Err(contract(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub mask_ratio: f64,
    pub ema_decay: f64,
    pub consistency_weight: f64,
    pub norm_pix_loss: bool,
}

impl TrainConfig {
    pub fn new(regime: Regime, seed: u64) -> Self {
        let (epochs, learning_rate, weight_decay) = match regime {
            Regime::Probe => (30, 1e-2, 0.0),
            _ => (50, 1e-3, 0.05),
        };
        Self {
            regime,
            epochs,
            batch_size: 64,
            learning_rate,
            weight_decay,
            betas: (0.9, 0.95),
            eps: 1e-8,
            seed,
            mask_ratio: 0.75,
            ema_decay: 0.996,
            consistency_weight: 1.0,
            norm_pix_loss: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(contract(format!("mask ratio {} must lie in [0, 1)", self.mask_ratio)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(contract(format!("EMA decay {} outside [0, 1]", self.ema_decay)));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW { lr: self.learning_rate, weight_decay: self.weight_decay, betas: self.betas, eps: self.eps }
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamW {
    pub fn step(&self, params: &mut ParameterSet, grads: &ParameterSet, state: &mut OptimizerState) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&state.m)?;
        params.check_compatible(&state.v)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", name: name.to_string() });
        }
        state.step += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(state.step as i32);
        let bc2 = 1.0 - b2.powi(state.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked").data();
            let m = state.m.get_mut(name).expect("checked").data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
            }
            let v = state.v.get_mut(name).expect("checked").data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            }
            let m = state.m.get(name).expect("checked").data();
            let v = state.v.get(name).expect("checked").data();
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *pi -= self.lr * self.weight_decay * *pi;
                *pi -= self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    cross_entropy_row(logits.data(), label)
}

/// Draws one mask per image for a batch, in batch order.
pub fn draw_masks(n_images: usize, n_patches: usize, ratio: f64, rng: &mut impl rand::Rng) -> Result<Vec<MaskSpec>> {
    (0..n_images).map(|_| sample_mask(n_patches, ratio, rng)).collect()
}

/// What a training batch is scored against.
pub enum BatchTask<'a> {
    Classify {
        labels: &'a [usize],
    },
    /// Masked reconstruction; with a teacher, plus the weighted consistency
    /// term against the teacher's predictions under the same masks.
    Reconstruct {
        targets: &'a Tensor,
        masks: &'a [MaskSpec],
        teacher: Option<(&'a ParameterSet, f64)>,
    },
}

pub struct BatchObjective {
    pub per_image: Vec<f64>,
    /// Mean of `per_image`.
    pub loss: f64,
    /// Gradient of `loss`; zero for parameters excluded by `trainable`.
    pub gradients: ParameterSet,
}

/// Loss of one batch (`patches` is `[B·N, P²C]`) and its gradient with
/// respect to the parameters selected by `trainable`.
pub fn batch_objective(
    model: &ViTModel,
    params: &ParameterSet,
    patches: &Tensor,
    task: BatchTask<'_>,
    trainable: impl Fn(&str) -> bool,
) -> Result<BatchObjective> {
    let n_patches = model.config().n_patches();
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, trainable);
    let per_image = match task {
        BatchTask::Classify { labels } => {
            let logits = model.logits_batch(&mut tape, &bound, patches)?;
            tape.cross_entropy(logits, labels.to_vec())?
        }
        BatchTask::Reconstruct { targets, masks, teacher } => {
            let mask_refs: Vec<&MaskSpec> = masks.iter().collect();
            let preds = model.reconstruct_batch(&mut tape, &bound, patches, &mask_refs)?;
            let teacher_preds = match teacher {
                Some((t, weight)) => {
                    let mut tt = Tape::new();
                    let tb = Bound::new(&mut tt, t, |_| false);
                    let tp = model.reconstruct_batch(&mut tt, &tb, patches, &mask_refs)?;
                    Some((tt.value(tp).clone(), weight))
                }
                None => None,
            };
            let masked = masks.iter().map(|m| m.masked().to_vec()).collect();
            tape.reconstruction(preds, targets.clone(), teacher_preds, masked, n_patches)?
        }
    };
    let loss = tape.mean(per_image);
    let value = tape.value(loss).item()?;
    let per = tape.value(per_image).data().to_vec();
    let gradients = bound.gradients(&tape.backward(loss)?);
    Ok(BatchObjective { per_image: per, loss: value, gradients })
}

/// Trains `model` under `cfg.regime` (supervised, mae or rcmae). The
/// returned checkpoint carries the final weights, per-epoch mean losses and,
/// for rcmae, the final teacher weights.
pub fn train(model: &ViTModel, data: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if cfg.regime == Regime::Probe {
        return Err(contract("probe runs go through linear_probe"));
    }
    let mc = model.config();
    if data.image_shape() != mc.image_shape() {
        return Err(crate::error::shape_err("train data", data.image_shape(), &mc.image_shape()));
    }
    if cfg.regime == Regime::Supervised && data.num_classes() > mc.num_classes {
        return Err(contract("dataset has more classes than the classifier head"));
    }
    let n_patches = mc.n_patches();
    let patches = data.patchify_all(mc)?;
    let targets: Vec<Tensor> =
        if cfg.norm_pix_loss { patches.iter().map(normalize_patches).collect() } else { patches.clone() };
    if cfg.regime != Regime::Supervised && crate::mim::masked_count(n_patches, cfg.mask_ratio) == 0 {
        return Err(contract("mask ratio leaves no patch to reconstruct"));
    }

    let optimizer = cfg.optimizer();
    let mut params = model.params().clone();
    let mut state = OptimizerState::new(&params);
    let mut teacher = match cfg.regime {
        Regime::Rcmae => Some(EmaTeacher::new(&params, cfg.ema_decay)?),
        _ => None,
    };
    let mut order_rng = rng_stream(cfg.seed, Stream::DataOrder);
    let mut mask_rng = rng_stream(cfg.seed, Stream::Masking);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = stack_patches(&patches, chunk)?;
            let labels: Vec<usize>;
            let masks: Vec<MaskSpec>;
            let target: Tensor;
            let task = match cfg.regime {
                Regime::Supervised => {
                    labels = chunk.iter().map(|&i| data.labels()[i]).collect();
                    BatchTask::Classify { labels: &labels }
                }
                _ => {
                    masks = draw_masks(chunk.len(), n_patches, cfg.mask_ratio, &mut mask_rng)?;
                    target = stack_patches(&targets, chunk)?;
                    let teacher = match &teacher {
                        Some(t) if cfg.consistency_weight != 0.0 => Some((t.params(), cfg.consistency_weight)),
                        _ => None,
                    };
                    BatchTask::Reconstruct { targets: &target, masks: &masks, teacher }
                }
            };
            let out = batch_objective(model, &params, &batch, task, |_| true)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            epoch_total += out.per_image.iter().sum::<f64>();
            let grads = out.gradients;
            optimizer.step(&mut params, &grads, &mut state)?;
            if let Some(t) = teacher.as_mut() {
                t.update(&params)?;
            }
        }
        history.push(epoch_total / data.len() as f64);
    }

    Ok(Checkpoint {
        config: mc.clone(),
        params,
        teacher: teacher.map(EmaTeacher::into_params),
        meta: TrainingMeta::new(cfg.clone(), history),
    })
}

/// Outcome of a linear probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub train_accuracy: f64,
}

const FEATURE_CHUNK: usize = 64;

/// Frozen pooled encoder features for every image, `[n, embed]`.
pub fn extract_features(model: &ViTModel, data: &Dataset) -> Result<Tensor> {
    let patches = data.patchify_all(model.config())?;
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(FEATURE_CHUNK) {
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, model.params(), |_| false);
        let batch = stack_patches(&patches, chunk)?;
        let f = model.features_batch(&mut tape, &b, &batch)?;
        parts.push(tape.value(f).clone());
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::vstack(&refs)
}

fn head_logits(head: &ParameterSet, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, head, |_| false);
    let x = tape.constant(features.clone());
    let l = tape.linear(x, b.get("head.weight")?, Some(b.get("head.bias")?))?;
    Ok(tape.value(l).clone())
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (rows, _) = logits.rows_cols();
    let correct = (0..rows)
        .filter(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == labels[r]
        })
        .count();
    correct as f64 / rows as f64
}

/// Classification accuracy of `model` on `data`.
pub fn evaluate_accuracy(model: &ViTModel, data: &Dataset) -> Result<f64> {
    let features = extract_features(model, data)?;
    let head = model.params().filter(is_head);
    Ok(accuracy(&head_logits(&head, &features)?, data.labels()))
}

/// Trains a fresh linear head on frozen encoder features. Only `head.*`
/// differs between the input model and the returned checkpoint.
pub fn linear_probe(
    encoder: &ViTModel,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, ProbeReport)> {
    cfg.validate()?;
    let mc = encoder.config();
    if train_data.num_classes() > mc.num_classes {
        return Err(contract("dataset has more classes than the classifier head"));
    }
    let train_features = extract_features(encoder, train_data)?;
    let eval_features = extract_features(encoder, eval_data)?;

    let mut init_rng = rng_stream(cfg.seed, Stream::ProbeHead);
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let mut head = ParameterSet::new();
    head.insert("head.weight", Tensor::from_fn(&[mc.num_classes, mc.embed_dim], |_| normal.sample(&mut init_rng)));
    head.insert("head.bias", Tensor::zeros(&[mc.num_classes]));
    let accuracy_before = accuracy(&head_logits(&head, &eval_features)?, eval_data.labels());

    let optimizer = cfg.optimizer();
    let mut state = OptimizerState::new(&head);
    let mut order_rng = rng_stream(cfg.seed, Stream::DataOrder);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let b = Bound::new(&mut tape, &head, |_| true);
            let x = tape.constant(train_features.gather_rows(chunk)?);
            let logits = tape.linear(x, b.get("head.weight")?, Some(b.get("head.bias")?))?;
            let labels = chunk.iter().map(|&i| train_data.labels()[i]).collect();
            let per = tape.cross_entropy(logits, labels)?;
            let loss = tape.mean(per);
            if !tape.value(loss).item()?.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            total += tape.value(per).sum();
            let grads = b.gradients(&tape.backward(loss)?);
            optimizer.step(&mut head, &grads, &mut state)?;
        }
        history.push(total / train_data.len() as f64);
    }

    let report = ProbeReport {
        accuracy_before,
        accuracy_after: accuracy(&head_logits(&head, &eval_features)?, eval_data.labels()),
        train_accuracy: accuracy(&head_logits(&head, &train_features)?, train_data.labels()),
    };
    let params = encoder.params().map(|name, t| head.get(name).cloned().unwrap_or_else(|| t.clone()));
    let mut meta = TrainingMeta::new(TrainConfig { regime: Regime::Probe, ..cfg.clone() }, history);
    meta.probe_accuracy = Some(report.accuracy_after);
    Ok((Checkpoint { config: mc.clone(), params, teacher: None, meta }, report))
}
