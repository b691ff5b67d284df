//! Masked image modeling objectives: patch masks, the masked reconstruction
//! loss, the reconstruction-consistency loss against an EMA teacher, and the
//! teacher itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::masked_rows_loss;
use crate::error::{contract, shape_err, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Partition of `0..n_patches` into masked and visible indices, both sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    n_patches: usize,
    masked: Vec<usize>,
    visible: Vec<usize>,
}

impl MaskSpec {
    pub fn from_masked(n_patches: usize, mut masked: Vec<usize>) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        if masked.last().is_some_and(|&m| m >= n_patches) {
            return Err(contract(format!("mask index out of range for {n_patches} patches")));
        }
        let visible = (0..n_patches).filter(|i| masked.binary_search(i).is_err()).collect();
        Ok(Self { n_patches, masked, visible })
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.binary_search(&i).is_ok()
    }
}

/// Number of patches masked at `ratio`.
pub fn masked_count(n_patches: usize, ratio: f64) -> usize {
    (ratio * n_patches as f64).round() as usize
}

/// Uniform subset of `round(ratio·n)` masked patches, drawn without replacement.
pub fn sample_mask(n_patches: usize, ratio: f64, rng: &mut impl Rng) -> Result<MaskSpec> {
    if n_patches == 0 {
        return Err(contract("need at least one patch"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(contract(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let k = masked_count(n_patches, ratio);
    let masked = rand::seq::index::sample(rng, n_patches, k).into_vec();
    MaskSpec::from_masked(n_patches, masked)
}

fn check_loss_inputs(targets: &Tensor, preds: &Tensor, mask: &MaskSpec) -> Result<()> {
    if targets.shape() != preds.shape() || targets.rank() != 2 {
        return Err(shape_err("reconstruction loss", targets.shape(), preds.shape()));
    }
    if targets.shape()[0] != mask.n_patches() {
        return Err(shape_err("reconstruction loss mask", targets.shape(), &[mask.n_patches()]));
    }
    if mask.masked().is_empty() {
        return Err(contract("reconstruction loss needs at least one masked patch"));
    }
    Ok(())
}

/// `(1/|M|)·Σ_{i∈M} ‖targetᵢ − predᵢ‖²`.
pub fn mae_loss(targets: &Tensor, preds: &Tensor, mask: &MaskSpec) -> Result<f64> {
    check_loss_inputs(targets, preds, mask)?;
    Ok(masked_rows_loss(preds, targets, None, mask.masked()))
}

/// `(1/|M|)·Σ_{i∈M} (‖targetᵢ − studentᵢ‖² + ‖studentᵢ − teacherᵢ‖²)`.
pub fn rc_mae_loss(targets: &Tensor, student: &Tensor, teacher: &Tensor, mask: &MaskSpec) -> Result<f64> {
    rc_mae_loss_weighted(targets, student, teacher, mask, 1.0)
}

/// [`rc_mae_loss`] with the consistency term scaled by `weight`.
pub fn rc_mae_loss_weighted(
    targets: &Tensor,
    student: &Tensor,
    teacher: &Tensor,
    mask: &MaskSpec,
    weight: f64,
) -> Result<f64> {
    check_loss_inputs(targets, student, mask)?;
    if teacher.shape() != student.shape() {
        return Err(shape_err("consistency", student.shape(), teacher.shape()));
    }
    Ok(masked_rows_loss(student, targets, Some((teacher, weight)), mask.masked()))
}

/// Per-patch pixel normalisation of reconstruction targets (zero mean,
/// unit variance within each patch row).
pub fn normalize_patches(patches: &Tensor) -> Tensor {
    let (rows, d) = patches.rows_cols();
    let mut out = patches.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (d as f64 - 1.0).max(1.0);
        let inv = 1.0 / (var + 1e-6).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Exponential moving average of student weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaTeacher {
    params: ParameterSet,
    decay: f64,
    step: u64,
}

impl EmaTeacher {
    /// Teacher starting as an exact copy of `student`.
    pub fn new(student: &ParameterSet, decay: f64) -> Result<Self> {
        Self::with_params(student.clone(), decay)
    }

    pub fn with_params(params: ParameterSet, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(contract(format!("EMA decay {decay} outside [0, 1]")));
        }
        Ok(Self { params, decay, step: 0 })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `T ← αT + (1−α)S`, elementwise.
    pub fn update(&mut self, student: &ParameterSet) -> Result<()> {
        self.params.check_compatible(student)?;
        let a = self.decay;
        if a == 0.0 {
            self.params = student.clone();
        } else if a < 1.0 {
            for (name, t) in self.params.iter_mut() {
                let s = student.get(name).expect("checked above");
                for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
                    *tv = a * *tv + (1.0 - a) * sv;
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Functional form of [`EmaTeacher::update`].
pub fn ema_update(teacher: &EmaTeacher, student: &ParameterSet) -> Result<EmaTeacher> {
    let mut next = teacher.clone();
    next.update(student)?;
    Ok(next)
}

/// Direct evaluation of the unrolled recursion
/// `T⁽ᵗ⁾ = α^{t+1}·T₀ + Σᵢ₌₀ᵗ αⁱ(1−α)·S⁽ᵗ⁻ⁱ⁾` for students `S⁽⁰⁾ … S⁽ᵗ⁾`.
pub fn ema_closed_form(students: &[ParameterSet], initial: &ParameterSet, decay: f64) -> Result<ParameterSet> {
    let t = students.len();
    if t == 0 {
        return Err(contract("closed-form EMA needs at least one student"));
    }
    for s in students {
        initial.check_compatible(s)?;
    }
    let mut out = initial.map(|_, x| x.scale(decay.powi(t as i32)));
    for (i, s) in students.iter().rev().enumerate() {
        let w = decay.powi(i as i32) * (1.0 - decay);
        for (name, acc) in out.iter_mut() {
            let sv = s.get(name).expect("checked above");
            for (a, &v) in acc.data_mut().iter_mut().zip(sv.data()) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}
