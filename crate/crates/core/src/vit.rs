//! A tiny Vision Transformer: patch embedding, an encoder over visible
//! patches, a light decoder that re-inserts mask tokens, and a linear
//! classifier over globally pooled encoder tokens.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, shape_err, Error, Result};
use crate::mim::MaskSpec;
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub embed_dim: usize,
    pub decoder_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            channels: 1,
            patch_size: 4,
            encoder_depth: 2,
            decoder_depth: 1,
            embed_dim: 32,
            decoder_dim: 16,
            heads: 4,
            mlp_ratio: 2,
            num_classes: 8,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(contract(m));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!("image size {} not divisible by patch size {}", self.image_size, self.patch_size));
        }
        if self.channels == 0 || self.num_classes == 0 || self.mlp_ratio == 0 || self.heads == 0 {
            return fail("channels, classes, heads and mlp ratio must be positive".into());
        }
        for (what, dim) in [("embed", self.embed_dim), ("decoder", self.decoder_dim)] {
            if dim == 0 || dim % self.heads != 0 {
                return fail(format!("{what} dim {dim} not divisible by {} heads", self.heads));
            }
            if dim % 4 != 0 {
                return fail(format!("{what} dim {dim} must be a multiple of 4 for 2-D sincos embeddings"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }

    /// Every parameter name with its shape, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, dd) = (self.embed_dim, self.decoder_dim);
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![e, self.patch_dim()]),
            ("patch_embed.bias".to_string(), vec![e]),
        ];
        let block = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, d: usize| {
            let h = d * self.mlp_ratio;
            for (suffix, shape) in [
                ("norm1.weight", vec![d]),
                ("norm1.bias", vec![d]),
                ("attn.qkv.weight", vec![3 * d, d]),
                ("attn.qkv.bias", vec![3 * d]),
                ("attn.proj.weight", vec![d, d]),
                ("attn.proj.bias", vec![d]),
                ("norm2.weight", vec![d]),
                ("norm2.bias", vec![d]),
                ("mlp.fc1.weight", vec![h, d]),
                ("mlp.fc1.bias", vec![h]),
                ("mlp.fc2.weight", vec![d, h]),
                ("mlp.fc2.bias", vec![d]),
            ] {
                out.push((format!("{prefix}.{suffix}"), shape));
            }
        };
        for i in 0..self.encoder_depth {
            block(&mut out, format!("encoder.blocks.{i}"), e);
        }
        if self.encoder_depth > 0 {
            out.push(("encoder.norm.weight".into(), vec![e]));
            out.push(("encoder.norm.bias".into(), vec![e]));
        }
        out.push(("decoder.embed.weight".into(), vec![dd, e]));
        out.push(("decoder.embed.bias".into(), vec![dd]));
        out.push(("decoder.mask_token".into(), vec![dd]));
        for i in 0..self.decoder_depth {
            block(&mut out, format!("decoder.blocks.{i}"), dd);
        }
        if self.decoder_depth > 0 {
            out.push(("decoder.norm.weight".into(), vec![dd]));
            out.push(("decoder.norm.bias".into(), vec![dd]));
        }
        out.push(("decoder.pred.weight".into(), vec![self.patch_dim(), dd]));
        out.push(("decoder.pred.bias".into(), vec![self.patch_dim()]));
        out.push(("head.weight".into(), vec![self.num_classes, e]));
        out.push(("head.bias".into(), vec![self.num_classes]));
        out
    }
}

/// Whether `name` belongs to the linear classifier head.
pub fn is_head(name: &str) -> bool {
    name.starts_with("head.")
}

/// Fixed 2-D sine-cosine positional table `[grid², dim]`.
pub fn sincos_2d(grid: usize, dim: usize) -> Tensor {
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64)).collect();
    let mut data = Vec::with_capacity(grid * grid * dim);
    for gy in 0..grid {
        for gx in 0..grid {
            for pos in [gy as f64, gx as f64] {
                data.extend(omega.iter().map(|w| (pos * w).sin()));
                data.extend(omega.iter().map(|w| (pos * w).cos()));
            }
        }
    }
    Tensor::from_parts(vec![grid * grid, dim], data)
}

/// Splits a `[C, H, W]` image into raster-ordered patches `[N, P·P·C]`;
/// within a patch the layout is `(row, col, channel)`.
pub fn patchify(image: &Tensor, cfg: &ViTConfig) -> Result<Tensor> {
    if image.shape() != cfg.image_shape() {
        return Err(shape_err("patchify", image.shape(), &cfg.image_shape()));
    }
    let (c, s, p, g) = (cfg.channels, cfg.image_size, cfg.patch_size, cfg.grid());
    let x = image.data();
    let mut out = Vec::with_capacity(x.len());
    for gy in 0..g {
        for gx in 0..g {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        out.push(x[(ch * s + gy * p + py) * s + gx * p + px]);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g * g, cfg.patch_dim()], out))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, cfg: &ViTConfig) -> Result<Tensor> {
    if patches.shape() != [cfg.n_patches(), cfg.patch_dim()] {
        return Err(shape_err("unpatchify", patches.shape(), &[cfg.n_patches(), cfg.patch_dim()]));
    }
    let (c, s, p, g) = (cfg.channels, cfg.image_size, cfg.patch_size, cfg.grid());
    let mut out = vec![0.0; c * s * s];
    let mut it = patches.data().iter();
    for gy in 0..g {
        for gx in 0..g {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        out[(ch * s + gy * p + py) * s + gx * p + px] = *it.next().expect("sized above");
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(cfg.image_shape().to_vec(), out))
}

/// Parameters bound to leaves (or constants) on one tape.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
}

impl Bound {
    /// Puts every parameter on `tape`; names accepted by `trainable` become
    /// differentiable leaves, the rest constants.
    pub fn new(tape: &mut Tape, params: &ParameterSet, trainable: impl Fn(&str) -> bool) -> Self {
        let mut b = Self::default();
        for (name, t) in params.iter() {
            let v = if trainable(name) { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
            b.vars.insert(name.to_string(), v);
            b.order.push((name.to_string(), v));
        }
        b
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Gradients for every bound parameter, as a [`ParameterSet`].
    pub fn gradients(&self, grads: &crate::autodiff::Gradients) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, v) in &self.order {
            out.insert(name.clone(), grads.wrt(*v));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViTModel {
    config: ViTConfig,
    params: ParameterSet,
    encoder_pos: Tensor,
    decoder_pos: Tensor,
}

impl ViTModel {
    /// Randomly initialised model: Xavier-uniform matrices, zero biases,
    /// unit norm gains, `N(0, 0.02²)` mask token and classifier weights.
    pub fn init(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng_stream(seed, crate::Stream::Init);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut params = ParameterSet::new();
        for (name, shape) in config.parameter_shapes() {
            let t = if name == "decoder.mask_token" || name == "head.weight" {
                Tensor::from_fn(&shape, |_| normal.sample(&mut rng))
            } else if shape.len() == 2 {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
            } else if name.contains("norm") && name.ends_with(".weight") {
                Tensor::ones(&shape)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        Self::from_params(config, params)
    }

    /// Wraps existing weights after checking names and shapes against the config.
    pub fn from_params(config: ViTConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if let Some(name) = params.names().find(|n| !expected.iter().any(|(e, _)| e == n)) {
            return Err(Error::UnknownParameter(name.to_string()));
        }
        let mut ordered = ParameterSet::new();
        for (name, shape) in expected {
            let t = params.get(&name).ok_or_else(|| contract(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(shape_err("parameter shape", t.shape(), &shape));
            }
            ordered.insert(name, t.clone());
        }
        let g = config.grid();
        Ok(Self {
            encoder_pos: sincos_2d(g, config.embed_dim),
            decoder_pos: sincos_2d(g, config.decoder_dim),
            config,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Replaces the weights; names and shapes must match.
    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        self.params.check_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    fn linear(&self, tape: &mut Tape, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let w = b.get(&format!("{prefix}.weight"))?;
        let bias = b.get(&format!("{prefix}.bias"))?;
        tape.linear(x, w, Some(bias))
    }

    fn norm(&self, tape: &mut Tape, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let g = b.get(&format!("{prefix}.weight"))?;
        let beta = b.get(&format!("{prefix}.bias"))?;
        tape.layer_norm(x, g, beta, LN_EPS)
    }

    fn block(&self, tape: &mut Tape, b: &Bound, prefix: &str, x: Var, seq: usize) -> Result<Var> {
        let h = self.norm(tape, b, &format!("{prefix}.norm1"), x)?;
        let qkv = self.linear(tape, b, &format!("{prefix}.attn.qkv"), h)?;
        let a = tape.attention(qkv, seq, self.config.heads)?;
        let a = self.linear(tape, b, &format!("{prefix}.attn.proj"), a)?;
        let x = tape.add(x, a)?;
        let h = self.norm(tape, b, &format!("{prefix}.norm2"), x)?;
        let h = self.linear(tape, b, &format!("{prefix}.mlp.fc1"), h)?;
        let h = tape.gelu(h);
        let h = self.linear(tape, b, &format!("{prefix}.mlp.fc2"), h)?;
        tape.add(x, h)
    }

    /// Encoder over the visible patches of each image in a batch.
    /// `patches` is `[batch·N, P²C]`; `visible[b]` lists image `b`'s visible
    /// patch indices (equal counts across the batch). Masked rows of
    /// `patches` are never read. Returns `[batch·|V|, embed]`.
    pub fn encode_batch(&self, tape: &mut Tape, b: &Bound, patches: &Tensor, visible: &[&[usize]]) -> Result<Var> {
        let n = self.config.n_patches();
        if patches.shape() != [visible.len() * n, self.config.patch_dim()] {
            return Err(shape_err("encode", patches.shape(), &[visible.len() * n, self.config.patch_dim()]));
        }
        let seq = visible.first().map_or(0, |v| v.len());
        if seq == 0 {
            return Err(contract("encoder needs at least one visible patch"));
        }
        let mut rows = Vec::with_capacity(visible.len() * seq);
        let mut pos_rows = Vec::with_capacity(visible.len() * seq);
        for (img, vis) in visible.iter().enumerate() {
            if vis.len() != seq {
                return Err(contract("visible counts differ within a batch"));
            }
            for &j in vis.iter() {
                if j >= n {
                    return Err(contract(format!("visible index {j} out of range for {n} patches")));
                }
                rows.push(img * n + j);
                pos_rows.push(j);
            }
        }
        let x = tape.constant(patches.gather_rows(&rows)?);
        let pos = tape.constant(self.encoder_pos.gather_rows(&pos_rows)?);
        let x = self.linear(tape, b, "patch_embed", x)?;
        let mut x = tape.add(x, pos)?;
        for i in 0..self.config.encoder_depth {
            x = self.block(tape, b, &format!("encoder.blocks.{i}"), x, seq)?;
        }
        if self.config.encoder_depth > 0 {
            x = self.norm(tape, b, "encoder.norm", x)?;
        }
        Ok(x)
    }

    /// Decoder over the full sequence: latent tokens return to their
    /// positions, masked positions get the shared mask token, both receive
    /// the decoder positional table. Returns `[batch·N, P²C]`.
    pub fn decode_batch(&self, tape: &mut Tape, b: &Bound, latent: Var, masks: &[&MaskSpec]) -> Result<Var> {
        let n = self.config.n_patches();
        let seq = masks.first().map_or(0, |m| m.visible().len());
        let (rows, _) = tape.value(latent).rows_cols();
        if rows != masks.len() * seq {
            return Err(contract(format!(
                "{rows} latent tokens for {} images with {seq} visible patches",
                masks.len()
            )));
        }
        let mut layout = Vec::with_capacity(masks.len() * n);
        for (img, m) in masks.iter().enumerate() {
            if m.n_patches() != n || m.visible().len() != seq {
                return Err(contract("mask does not match the latent batch"));
            }
            let mut next = 0;
            for i in 0..n {
                if m.is_masked(i) {
                    layout.push(None);
                } else {
                    layout.push(Some(img * seq + next));
                    next += 1;
                }
            }
        }
        let y = self.linear(tape, b, "decoder.embed", latent)?;
        let mask_token = b.get("decoder.mask_token")?;
        let y = tape.assemble(y, mask_token, layout)?;
        let pos_table: Vec<&Tensor> = (0..masks.len()).map(|_| &self.decoder_pos).collect();
        let pos = tape.constant(Tensor::vstack(&pos_table)?);
        let mut y = tape.add(y, pos)?;
        for i in 0..self.config.decoder_depth {
            y = self.block(tape, b, &format!("decoder.blocks.{i}"), y, n)?;
        }
        if self.config.decoder_depth > 0 {
            y = self.norm(tape, b, "decoder.norm", y)?;
        }
        self.linear(tape, b, "decoder.pred", y)
    }

    /// Masked reconstruction forward pass: `[batch·N, P²C]` predictions.
    pub fn reconstruct_batch(&self, tape: &mut Tape, b: &Bound, patches: &Tensor, masks: &[&MaskSpec]) -> Result<Var> {
        let visible: Vec<&[usize]> = masks.iter().map(|m| m.visible()).collect();
        let z = self.encode_batch(tape, b, patches, &visible)?;
        self.decode_batch(tape, b, z, masks)
    }

    /// Globally pooled encoder features over all patches, `[batch, embed]`.
    pub fn features_batch(&self, tape: &mut Tape, b: &Bound, patches: &Tensor) -> Result<Var> {
        let n = self.config.n_patches();
        let batch = patches.rows_cols().0 / n;
        let all: Vec<usize> = (0..n).collect();
        let visible: Vec<&[usize]> = (0..batch).map(|_| all.as_slice()).collect();
        let z = self.encode_batch(tape, b, patches, &visible)?;
        tape.mean_pool(z, n)
    }

    /// Classifier logits `[batch, K]`.
    pub fn logits_batch(&self, tape: &mut Tape, b: &Bound, patches: &Tensor) -> Result<Var> {
        let f = self.features_batch(tape, b, patches)?;
        self.linear(tape, b, "head", f)
    }

    fn frozen(&self, tape: &mut Tape) -> Bound {
        Bound::new(tape, &self.params, |_| false)
    }

    /// Latent tokens `[|V|, embed]` for one patchified image.
    pub fn encode(&self, patches: &Tensor, visible: &MaskSpec) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.frozen(&mut tape);
        let z = self.encode_batch(&mut tape, &b, patches, &[visible.visible()])?;
        Ok(tape.value(z).clone())
    }

    /// Full-length prediction `[N, P²C]` from one image's latent tokens.
    pub fn decode(&self, latent: &Tensor, mask: &MaskSpec) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.frozen(&mut tape);
        let z = tape.constant(latent.clone());
        let y = self.decode_batch(&mut tape, &b, z, &[mask])?;
        Ok(tape.value(y).clone())
    }

    /// Logits `[K]` for one patchified image.
    pub fn classify(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.frozen(&mut tape);
        let l = self.logits_batch(&mut tape, &b, patches)?;
        Tensor::new(vec![self.config.num_classes], tape.value(l).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mim::sample_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(cfg: &ViTConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&cfg.image_shape(), |_| rng.random::<f64>())
    }

    #[test]
    fn single_patch_is_flattened_image() {
        let cfg = ViTConfig { image_size: 4, patch_size: 4, ..ViTConfig::default() };
        let img = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), &[1, 16]);
        assert_eq!(p.data(), img.data());
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let cfg = ViTConfig { image_size: 4, patch_size: 2, ..ViTConfig::default() };
        let p = patchify(&Tensor::full(&[1, 4, 4], 0.3), &cfg).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert!(p.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn patchify_round_trip_is_exact() {
        let cfg = ViTConfig { channels: 3, ..ViTConfig::default() };
        let img = random_image(&cfg, 5);
        let back = unpatchify(&patchify(&img, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(back, img);
        assert!(patchify(&Tensor::zeros(&[1, 16, 16]), &cfg).is_err());
    }

    #[test]
    fn encoder_shapes() {
        let cfg = ViTConfig::default();
        let model = ViTModel::init(cfg.clone(), 0).unwrap();
        let patches = patchify(&random_image(&cfg, 1), &cfg).unwrap();
        let all = MaskSpec::from_masked(16, vec![]).unwrap();
        assert_eq!(model.encode(&patches, &all).unwrap().shape(), &[16, 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = sample_mask(16, 0.75, &mut rng).unwrap();
        assert_eq!(model.encode(&patches, &m).unwrap().shape(), &[4, 32]);
        let none = MaskSpec::from_masked(16, (0..16).collect()).unwrap();
        assert!(model.encode(&patches, &none).is_err());
    }

    #[test]
    fn masked_patch_content_never_reaches_the_encoder() {
        let cfg = ViTConfig::default();
        let model = ViTModel::init(cfg.clone(), 0).unwrap();
        let patches = patchify(&random_image(&cfg, 1), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = sample_mask(16, 0.75, &mut rng).unwrap();
        let mut scrambled = patches.clone();
        let d = cfg.patch_dim();
        let masked = m.masked().to_vec();
        for (k, &i) in masked.iter().enumerate() {
            let src = masked[(k + 1) % masked.len()];
            for j in 0..d {
                scrambled.data_mut()[i * d + j] = patches.data()[src * d + j] * 7.0 - 3.0;
            }
        }
        let z1 = model.encode(&patches, &m).unwrap();
        let z2 = model.encode(&scrambled, &m).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(model.decode(&z1, &m).unwrap(), model.decode(&z2, &m).unwrap());
    }

    #[test]
    fn decoder_output_shape_and_cardinality_check() {
        let cfg = ViTConfig::default();
        let model = ViTModel::init(cfg.clone(), 0).unwrap();
        let patches = patchify(&random_image(&cfg, 1), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for ratio in [0.0, 0.25, 0.75, 0.9] {
            let m = sample_mask(16, ratio, &mut rng).unwrap();
            let z = model.encode(&patches, &m).unwrap();
            assert_eq!(model.decode(&z, &m).unwrap().shape(), &[16, 16]);
        }
        let m = sample_mask(16, 0.5, &mut rng).unwrap();
        let z = model.encode(&patches, &m).unwrap();
        let other = sample_mask(16, 0.75, &mut rng).unwrap();
        assert!(model.decode(&z, &other).is_err());
    }

    #[test]
    fn zero_depth_decoder_is_a_linear_projection() {
        let cfg = ViTConfig { decoder_depth: 0, decoder_dim: 16, ..ViTConfig::default() };
        let mut model = ViTModel::init(cfg.clone(), 0).unwrap();
        let mut p = model.params().clone();
        *p.get_mut("decoder.pred.weight").unwrap() = Tensor::eye(16);
        *p.get_mut("decoder.pred.bias").unwrap() = Tensor::zeros(&[16]);
        model.set_params(p.clone()).unwrap();
        let patches = patchify(&random_image(&cfg, 1), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = sample_mask(16, 0.5, &mut rng).unwrap();
        let z = model.encode(&patches, &m).unwrap();
        let y = model.decode(&z, &m).unwrap();
        let w = p.get("decoder.embed.weight").unwrap();
        let b = p.get("decoder.embed.bias").unwrap();
        let token = p.get("decoder.mask_token").unwrap();
        let pos = sincos_2d(4, 16);
        let mut next = 0;
        for i in 0..16 {
            let expect: Vec<f64> = if m.is_masked(i) {
                token.data().iter().zip(pos.row(i)).map(|(a, b)| a + b).collect()
            } else {
                let zr = z.row(next);
                next += 1;
                (0..16)
                    .map(|o| {
                        let dot: f64 = w.row(o).iter().zip(zr).map(|(a, b)| a * b).sum();
                        dot + b.data()[o] + pos.row(i)[o]
                    })
                    .collect()
            };
            for (a, e) in y.row(i).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let cfg = ViTConfig { num_classes: 2, ..ViTConfig::default() };
        let mut model = ViTModel::init(cfg.clone(), 0).unwrap();
        let mut p = model.params().clone();
        *p.get_mut("head.weight").unwrap() = Tensor::zeros(&[2, 32]);
        model.set_params(p).unwrap();
        let patches = patchify(&random_image(&cfg, 1), &cfg).unwrap();
        let logits = model.classify(&patches).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0]);
        let probs = logits.softmax(0).unwrap();
        assert_eq!(probs.data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_query_key_weights_average_the_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (batch, seq, dim) = (2, 5, 8);
        let mut qkv = Tensor::from_fn(&[batch * seq, 3 * dim], |_| rng.random_range(-1.0..1.0));
        for r in 0..batch * seq {
            for c in 0..2 * dim {
                qkv.data_mut()[r * 3 * dim + c] = 0.0;
            }
        }
        let mut tape = Tape::new();
        let v = tape.constant(qkv.clone());
        let out = tape.attention(v, seq, 2).unwrap();
        let out = tape.value(out);
        for b in 0..batch {
            for d in 0..dim {
                let mean: f64 =
                    (0..seq).map(|s| qkv.data()[(b * seq + s) * 3 * dim + 2 * dim + d]).sum::<f64>() / seq as f64;
                for s in 0..seq {
                    assert!((out.data()[(b * seq + s) * dim + d] - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let cfg = ViTConfig::default();
        let a = ViTModel::init(cfg.clone(), 1).unwrap();
        let b = ViTModel::init(cfg, 2).unwrap();
        let names: Vec<&str> = a.params().names().collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names, b.params().names().collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ViTConfig { patch_size: 3, ..ViTConfig::default() }.validate().is_err());
        assert!(ViTConfig { heads: 3, ..ViTConfig::default() }.validate().is_err());
    }
}
