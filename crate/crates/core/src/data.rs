//! Labelled image datasets and the procedural pattern generator used in
//! place of a real image corpus.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, Result};
use crate::tensor::Tensor;
use crate::vit::{patchify, ViTConfig};

/// Number of distinct procedural pattern families.
pub const PATTERN_FAMILIES: usize = 8;

/// Additive pixel noise of generated images.
pub const NOISE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.is_empty() {
            return Err(contract("dataset needs at least one image"));
        }
        if images.len() != labels.len() {
            return Err(shape_err("dataset", &[images.len()], &[labels.len()]));
        }
        let shape = images[0].shape().to_vec();
        if let Some(bad) = images.iter().find(|im| im.shape() != shape.as_slice()) {
            return Err(shape_err("dataset image", &shape, bad.shape()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(contract(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Self { images, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    /// Every image patchified for `cfg`.
    pub fn patchify_all(&self, cfg: &ViTConfig) -> Result<Vec<Tensor>> {
        self.images.iter().map(|im| patchify(im, cfg)).collect()
    }
}

/// Row-stacks the patch matrices of the selected images: `[B·N, P²C]`.
pub fn stack_patches(patches: &[Tensor], indices: &[usize]) -> Result<Tensor> {
    let parts: Vec<&Tensor> = indices.iter().map(|&i| &patches[i]).collect();
    Tensor::vstack(&parts)
}

/// Procedural dataset: image `i` has label `i mod k_classes`, and each class
/// is one pattern family (horizontal bars, vertical bars, diagonal stripes,
/// checkers, disks, rings, linear gradients, radial gradients) with random
/// orientation, phase, frequency and position, plus `N(0, 0.1²)` pixel noise,
/// clamped to `[0, 1]`.
pub fn generate_synthetic(n: usize, config: &ViTConfig, k_classes: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(contract("need at least one image"));
    }
    if k_classes == 0 || k_classes > PATTERN_FAMILIES {
        return Err(contract(format!(
            "{k_classes} classes requested but only {PATTERN_FAMILIES} pattern families exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let [c, s, _] = config.image_shape();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k_classes;
        let pattern = Pattern::sample(label, &mut rng);
        let mut data = Vec::with_capacity(c * s * s);
        for ch in 0..c {
            let gain = 1.0 - 0.15 * ch as f64;
            for y in 0..s {
                for x in 0..s {
                    let u = (x as f64 + 0.5) / s as f64;
                    let v = (y as f64 + 0.5) / s as f64;
                    let px = pattern.value(u, v) * gain + noise.sample(&mut rng);
                    data.push(px.clamp(0.0, 1.0));
                }
            }
        }
        images.push(Tensor::from_parts(vec![c, s, s], data));
        labels.push(label);
    }
    Dataset::new(images, labels, k_classes, split)
}

const LOW: f64 = 0.15;
const HIGH: f64 = 0.85;

fn level(on: bool) -> f64 {
    if on {
        HIGH
    } else {
        LOW
    }
}

enum Pattern {
    Stripes { angle: f64, freq: f64, phase: f64 },
    Checkers { freq: f64, phase_u: f64, phase_v: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    Ring { cx: f64, cy: f64, r: f64, width: f64 },
    Linear { angle: f64, offset: f64 },
    Radial { cx: f64, cy: f64, scale: f64 },
}

impl Pattern {
    fn sample(family: usize, rng: &mut ChaCha8Rng) -> Self {
        let jitter = rng.random_range(-0.15..0.15);
        let freq = rng.random_range(1.5..3.0);
        let phase = rng.random_range(0.0..TAU);
        match family {
            0 => Pattern::Stripes { angle: jitter, freq, phase },
            1 => Pattern::Stripes { angle: PI / 2.0 + jitter, freq, phase },
            2 => Pattern::Stripes { angle: PI / 4.0 + jitter, freq, phase },
            3 => Pattern::Checkers { freq, phase_u: phase, phase_v: rng.random_range(0.0..TAU) },
            4 => Pattern::Disk {
                cx: rng.random_range(0.3..0.7),
                cy: rng.random_range(0.3..0.7),
                r: rng.random_range(0.18..0.32),
            },
            5 => Pattern::Ring {
                cx: rng.random_range(0.35..0.65),
                cy: rng.random_range(0.35..0.65),
                r: rng.random_range(0.22..0.32),
                width: rng.random_range(0.07..0.12),
            },
            6 => Pattern::Linear { angle: rng.random_range(0.0..TAU), offset: rng.random_range(-0.1..0.1) },
            _ => Pattern::Radial {
                cx: rng.random_range(0.25..0.75),
                cy: rng.random_range(0.25..0.75),
                scale: rng.random_range(1.2..1.8),
            },
        }
    }

    fn value(&self, u: f64, v: f64) -> f64 {
        match *self {
            Pattern::Stripes { angle, freq, phase } => {
                let t = u * angle.sin() + v * angle.cos();
                level((TAU * freq * t + phase).sin() > 0.0)
            }
            Pattern::Checkers { freq, phase_u, phase_v } => {
                level((TAU * freq * u + phase_u).sin() * (TAU * freq * v + phase_v).sin() > 0.0)
            }
            Pattern::Disk { cx, cy, r } => level((u - cx).hypot(v - cy) < r),
            Pattern::Ring { cx, cy, r, width } => level(((u - cx).hypot(v - cy) - r).abs() < width),
            Pattern::Linear { angle, offset } => {
                (0.5 + offset + 0.7 * ((u - 0.5) * angle.cos() + (v - 0.5) * angle.sin())).clamp(0.0, 1.0)
            }
            Pattern::Radial { cx, cy, scale } => (0.9 - scale * (u - cx).hypot(v - cy)).clamp(0.0, 1.0),
        }
    }
}
