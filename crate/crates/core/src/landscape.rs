//! Filter-normalised two-dimensional loss landscapes.
//!
//! Two Gaussian directions `δ`, `η` are drawn over the model's parameter
//! space and rescaled filter by filter to the norms of the trained weights.
//! The loss is then evaluated on the grid `θ + αδ + βη`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cross_entropy_row, masked_rows_loss, Tape};
use crate::data::{stack_patches, Dataset};
use crate::error::{contract, Error, Result};
use crate::mim::{normalize_patches, MaskSpec};
use crate::params::ParameterSet;
use crate::tensor::{l2_norm, Tensor};
use crate::train::{draw_masks, Regime};
use crate::vit::{is_head, Bound, ViTModel};
use crate::{rng_stream, Stream};

/// Which parameters a landscape direction may move, and how filters are grouped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// Treat each 1-D tensor (biases, norm gains, mask token) as one filter
    /// group instead of freezing it.
    pub perturb_1d: bool,
    /// Freeze everything outside the classifier head.
    pub head_only: bool,
}

impl FilterPolicy {
    pub fn describe(&self) -> String {
        let mut s = String::from("matrix rows are filters");
        s.push_str(if self.perturb_1d { "; 1-D tensors are single groups" } else { "; 1-D tensors frozen" });
        if self.head_only {
            s.push_str("; head only");
        }
        s
    }

    /// Filter groups of one tensor as `(start, len)` spans, or `None` when
    /// the tensor is not perturbed.
    pub fn groups(&self, name: &str, shape: &[usize]) -> Option<Vec<(usize, usize)>> {
        if self.head_only && !is_head(name) {
            return None;
        }
        match shape {
            [n] if self.perturb_1d => Some(vec![(0, *n)]),
            [_] => None,
            [rows, rest @ ..] => {
                let len: usize = rest.iter().product();
                Some((0..*rows).map(|r| (r * len, len)).collect())
            }
            [] => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionPair {
    pub delta: ParameterSet,
    pub eta: ParameterSet,
    pub seed: u64,
    pub normalized: bool,
}

fn gaussian_like(params: &ParameterSet, seed: u64, stream: Stream) -> ParameterSet {
    let mut rng = rng_stream(seed, stream);
    params.map(|_, t| Tensor::from_fn(t.shape(), |_| StandardNormal.sample(&mut rng)))
}

/// Two independent standard-normal directions shaped like `params`.
pub fn sample_directions(params: &ParameterSet, seed: u64) -> DirectionPair {
    DirectionPair {
        delta: gaussian_like(params, seed, Stream::DirectionDelta),
        eta: gaussian_like(params, seed, Stream::DirectionEta),
        seed,
        normalized: false,
    }
}

/// Rescales every filter group `g` of `direction` to `‖θ_g‖`. Frozen groups
/// and groups whose weights are all zero become zero.
pub fn filter_normalize(
    direction: &ParameterSet,
    params: &ParameterSet,
    policy: &FilterPolicy,
) -> Result<ParameterSet> {
    params.check_compatible(direction)?;
    let mut out = direction.clone();
    for (name, d) in out.iter_mut() {
        let theta = params.get(name).expect("checked");
        let shape = d.shape().to_vec();
        let data = d.data_mut();
        let Some(groups) = policy.groups(name, &shape) else {
            data.fill(0.0);
            continue;
        };
        for (g, (start, len)) in groups.into_iter().enumerate() {
            let span = start..start + len;
            let target = l2_norm(&theta.data()[span.clone()]);
            let current = l2_norm(&data[span.clone()]);
            if target == 0.0 {
                data[span].fill(0.0);
            } else if current == 0.0 {
                return Err(Error::DegenerateDirection { name: name.to_string(), group: g });
            } else {
                let s = target / current;
                data[span].iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    Ok(out)
}

impl DirectionPair {
    pub fn normalize(&self, params: &ParameterSet, policy: &FilterPolicy) -> Result<Self> {
        Ok(Self {
            delta: filter_normalize(&self.delta, params, policy)?,
            eta: filter_normalize(&self.eta, params, policy)?,
            seed: self.seed,
            normalized: true,
        })
    }

    pub fn negated(&self) -> Self {
        Self { delta: self.delta.map(|_, t| t.scale(-1.0)), eta: self.eta.map(|_, t| t.scale(-1.0)), ..self.clone() }
    }
}

/// Loss a landscape is drawn over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Masked reconstruction error.
    Mae,
    /// Masked reconstruction plus consistency with a fixed teacher.
    Rcmae,
    /// Classification cross-entropy.
    Ce,
}

impl LossKind {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Mae => LossKind::Mae,
            Regime::Rcmae => LossKind::Rcmae,
            Regime::Supervised | Regime::Probe => LossKind::Ce,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Rcmae => "rcmae",
            LossKind::Ce => "ce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "rcmae" => Ok(LossKind::Rcmae),
            "ce" => Ok(LossKind::Ce),
            other => Err(contract(format!("unknown loss `{other}` (mae, rcmae, ce)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSetup {
    pub loss: LossKind,
    pub mask_ratio: f64,
    /// Seeds the fixed per-image evaluation masks.
    pub eval_seed: u64,
    pub consistency_weight: f64,
    pub norm_pix_loss: bool,
}

impl EvalSetup {
    pub fn new(loss: LossKind, eval_seed: u64) -> Self {
        Self { loss, mask_ratio: 0.75, eval_seed, consistency_weight: 1.0, norm_pix_loss: false }
    }
}

/// Images evaluated together in one forward pass.
pub const EVAL_CHUNK: usize = 64;

struct Chunk {
    indices: Vec<usize>,
    patches: Tensor,
    targets: Tensor,
    masks: Vec<MaskSpec>,
    teacher_preds: Option<Tensor>,
}

/// A dataset prepared for repeated loss evaluation at different weights.
/// Masks (and teacher predictions) are fixed once at construction.
pub struct Evaluator {
    model: ViTModel,
    setup: EvalSetup,
    labels: Vec<usize>,
    chunks: Vec<Chunk>,
    n: usize,
}

impl Evaluator {
    pub fn new(model: &ViTModel, data: &Dataset, setup: EvalSetup, teacher: Option<&ParameterSet>) -> Result<Self> {
        let cfg = model.config();
        let n_patches = cfg.n_patches();
        let patches = data.patchify_all(cfg)?;
        let needs_masks = setup.loss != LossKind::Ce;
        if needs_masks && crate::mim::masked_count(n_patches, setup.mask_ratio) == 0 {
            return Err(contract("evaluation mask ratio leaves no patch to reconstruct"));
        }
        if needs_masks && crate::mim::masked_count(n_patches, setup.mask_ratio) == n_patches {
            return Err(contract("evaluation mask ratio leaves no visible patch"));
        }
        let teacher = match (setup.loss, teacher) {
            (LossKind::Rcmae, Some(t)) => {
                model.params().check_compatible(t)?;
                Some(t)
            }
            (LossKind::Rcmae, None) => return Err(contract("consistency loss needs teacher weights")),
            _ => None,
        };
        let mut mask_rng = rng_stream(setup.eval_seed, Stream::EvalMasks);
        let all: Vec<usize> = (0..data.len()).collect();
        let mut chunks = Vec::new();
        for idx in all.chunks(EVAL_CHUNK) {
            let batch = stack_patches(&patches, idx)?;
            let targets = if setup.norm_pix_loss { normalize_patches(&batch) } else { batch.clone() };
            let masks = if needs_masks {
                draw_masks(idx.len(), n_patches, setup.mask_ratio, &mut mask_rng)?
            } else {
                Vec::new()
            };
            let teacher_preds = match teacher {
                Some(t) => {
                    let mut tape = Tape::new();
                    let b = Bound::new(&mut tape, t, |_| false);
                    let refs: Vec<&MaskSpec> = masks.iter().collect();
                    let y = model.reconstruct_batch(&mut tape, &b, &batch, &refs)?;
                    Some(tape.value(y).clone())
                }
                None => None,
            };
            chunks.push(Chunk { indices: idx.to_vec(), patches: batch, targets, masks, teacher_preds });
        }
        Ok(Self { model: model.clone(), setup, labels: data.labels().to_vec(), chunks, n: data.len() })
    }

    pub fn setup(&self) -> &EvalSetup {
        &self.setup
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Per-image losses at `params`, in dataset order.
    pub fn per_image(&self, params: &ParameterSet) -> Result<Vec<f64>> {
        let n_patches = self.model.config().n_patches();
        let mut out = Vec::with_capacity(self.n);
        for c in &self.chunks {
            let mut tape = Tape::new();
            let b = Bound::new(&mut tape, params, |_| false);
            match self.setup.loss {
                LossKind::Ce => {
                    let l = self.model.logits_batch(&mut tape, &b, &c.patches)?;
                    let logits = tape.value(l);
                    for (r, &i) in c.indices.iter().enumerate() {
                        out.push(cross_entropy_row(logits.row(r), self.labels[i])?);
                    }
                }
                LossKind::Mae | LossKind::Rcmae => {
                    let refs: Vec<&MaskSpec> = c.masks.iter().collect();
                    let y = self.model.reconstruct_batch(&mut tape, &b, &c.patches, &refs)?;
                    let preds = tape.value(y);
                    let teacher = c.teacher_preds.as_ref().map(|t| (t, self.setup.consistency_weight));
                    for (r, m) in c.masks.iter().enumerate() {
                        let rows: Vec<usize> = m.masked().iter().map(|&i| r * n_patches + i).collect();
                        out.push(masked_rows_loss(preds, &c.targets, teacher, &rows));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Mean loss over the whole dataset, summed in dataset order.
    pub fn loss(&self, params: &ParameterSet) -> Result<f64> {
        let per = self.per_image(params)?;
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }
}

/// `resolution` evenly spaced values in `[-half_range, half_range]`,
/// symmetric about and containing 0 exactly.
pub fn coordinates(resolution: usize, half_range: f64) -> Result<Vec<f64>> {
    if resolution.is_multiple_of(2) {
        return Err(contract(format!("resolution {resolution} must be odd so the origin is on the grid")));
    }
    if !(half_range.is_finite() && half_range > 0.0) {
        return Err(contract(format!("half range {half_range} must be positive")));
    }
    let mid = (resolution / 2) as i64;
    if mid == 0 {
        return Ok(vec![0.0]);
    }
    let step = half_range / mid as f64;
    Ok((0..resolution as i64).map(|i| (i - mid) as f64 * step).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[i][j]` is the loss at `(alphas[i], betas[j])`; non-finite
    /// values are stored as `+∞`.
    pub losses: Vec<Vec<f64>>,
    pub base_loss: f64,
    pub regime: String,
    pub direction_seed: u64,
}

impl LandscapeGrid {
    /// Grid built from precomputed values over symmetric coordinates.
    pub fn from_fn(resolution: usize, half_range: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let c = coordinates(resolution, half_range)?;
        let losses: Vec<Vec<f64>> = c.iter().map(|&a| c.iter().map(|&b| sanitize(f(a, b))).collect()).collect();
        let mid = resolution / 2;
        Ok(Self {
            base_loss: losses[mid][mid],
            alphas: c.clone(),
            betas: c,
            losses,
            regime: String::new(),
            direction_seed: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.alphas.len()
    }

    pub fn half_range(&self) -> f64 {
        self.alphas.last().copied().unwrap_or(0.0)
    }

    pub fn center(&self) -> (usize, usize) {
        (self.alphas.len() / 2, self.betas.len() / 2)
    }

    pub fn finite_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.losses.iter().flatten().copied().filter(|v| v.is_finite())
    }

    /// The grid with both axes reversed.
    pub fn flipped(&self) -> Self {
        let mut g = self.clone();
        g.losses = self.losses.iter().rev().map(|row| row.iter().rev().copied().collect()).collect();
        g
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Evaluates `θ + αδ + βη` on a `resolution × resolution` grid using
/// `workers` threads. Each point is computed independently into its own
/// slot, so the result does not depend on the worker count. `base` is never
/// modified.
pub fn evaluate_grid(
    evaluator: &Evaluator,
    base: &ParameterSet,
    directions: &DirectionPair,
    resolution: usize,
    half_range: f64,
    workers: usize,
) -> Result<LandscapeGrid> {
    if !directions.normalized {
        return Err(contract("directions must be filter-normalised before evaluation"));
    }
    base.check_compatible(&directions.delta)?;
    base.check_compatible(&directions.eta)?;
    let coords = coordinates(resolution, half_range)?;
    let points: Vec<(usize, usize)> = (0..resolution).flat_map(|i| (0..resolution).map(move |j| (i, j))).collect();
    let eval_point = |&(i, j): &(usize, usize)| -> Result<f64> {
        let p = base.offset(&[(coords[i], &directions.delta), (coords[j], &directions.eta)])?;
        Ok(sanitize(evaluator.loss(&p)?))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| contract(format!("cannot start worker pool: {e}")))?;
    let flat: Vec<f64> = pool.install(|| points.par_iter().map(eval_point).collect::<Result<Vec<f64>>>())?;
    let losses: Vec<Vec<f64>> = flat.chunks(resolution).map(<[f64]>::to_vec).collect();
    let mid = resolution / 2;
    Ok(LandscapeGrid {
        base_loss: losses[mid][mid],
        alphas: coords.clone(),
        betas: coords,
        losses,
        regime: String::new(),
        direction_seed: directions.seed,
    })
}

/// Samples, normalises and evaluates one landscape around `base`.
pub fn landscape(
    evaluator: &Evaluator,
    base: &ParameterSet,
    direction_seed: u64,
    policy: &FilterPolicy,
    resolution: usize,
    half_range: f64,
    workers: usize,
) -> Result<LandscapeGrid> {
    let dirs = sample_directions(base, direction_seed).normalize(base, policy)?;
    evaluate_grid(evaluator, base, &dirs, resolution, half_range, workers)
}
