//! Tiny Vision Transformer laboratory: supervised, MAE and RC-MAE training
//! plus filter-normalised two-dimensional loss landscapes, curvature
//! metrics and SVG rendering.

pub mod autodiff;
pub mod checkpoint;
pub mod compare;
pub mod data;
pub mod error;
pub mod grid_io;
pub mod idx;
pub mod landscape;
pub mod metrics;
pub mod mim;
pub mod params;
pub mod render;
pub mod reproduce;
pub mod tensor;
pub mod train;
pub mod vit;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
pub use data::{generate_synthetic, Dataset, Split};
pub use error::{Error, Result};
pub use landscape::{
    evaluate_grid, filter_normalize, sample_directions, DirectionPair, EvalSetup, Evaluator, FilterPolicy,
    LandscapeGrid, LossKind,
};
pub use mim::{ema_closed_form, ema_update, mae_loss, rc_mae_loss, sample_mask, EmaTeacher, MaskSpec};
pub use params::ParameterSet;
pub use tensor::Tensor;
pub use train::{linear_probe, train, ProbeReport, Regime, TrainConfig};
pub use vit::{ViTConfig, ViTModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one run seed, one per purpose,
/// so that e.g. changing the mask ratio never shifts the initialisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    DataOrder,
    Masking,
    ProbeHead,
    DirectionDelta,
    DirectionEta,
    EvalMasks,
}

pub fn rng_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Lowercase hexadecimal encoding.
pub fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
