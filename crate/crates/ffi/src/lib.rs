//! C interface to mimscape.
//!
//! Every function returns a [`MimsStatus`]; results come back through out
//! pointers. On failure a description is available from
//! [`mims_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mimscape::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mimscape::data::{generate_synthetic, Split};
use mimscape::grid_io::{read_grid_csv, write_grid_csv};
use mimscape::landscape::{landscape, EvalSetup, Evaluator, FilterPolicy, LandscapeGrid, LossKind};
use mimscape::metrics::{curvature_report, default_epsilon};
use mimscape::render::{render_svg, RenderMode, RenderSpec};
use mimscape::reproduce::EVAL_DATA_SEED_OFFSET;
use mimscape::train::{train, Regime, TrainConfig};
use mimscape::vit::{ViTConfig, ViTModel};
use mimscape::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checksum = 5,
    Version = 6,
    Shape = 7,
    Numeric = 8,
    Mismatch = 9,
    Panic = 10,
}

/// Loaded or trained model checkpoint.
pub struct MimsCheckpoint {
    inner: Checkpoint,
}

/// Loss landscape grid.
pub struct MimsGrid {
    inner: LandscapeGrid,
}

/// Curvature summary of a grid.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MimsCurvature {
    pub convexity_fraction: f64,
    pub flatness_radius: f64,
    pub loss_range: f64,
    pub center_gap: f64,
    pub epsilon: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MimsStatus {
    match e {
        Error::Io(_) => MimsStatus::Io,
        Error::Format { .. } | Error::Json(_) => MimsStatus::Format,
        Error::Checksum { .. } => MimsStatus::Checksum,
        Error::Version { .. } => MimsStatus::Version,
        Error::Shape { .. } => MimsStatus::Shape,
        Error::NonFinite { .. }
        | Error::Diverged { .. }
        | Error::NoFiniteValues
        | Error::DegenerateDirection { .. } => MimsStatus::Numeric,
        Error::ParameterMismatch { .. }
        | Error::UnknownParameter(_)
        | Error::CoordinateMismatch(_)
        | Error::RegimeMismatch { .. } => MimsStatus::Mismatch,
        _ => MimsStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MimsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MimsStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer passed for `{what}`"));
            MimsStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(&msg);
            MimsStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            MimsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg(format!("`{what}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse::<T>().map_err(Failure::Lib)
}

/// Why the most recent call on this thread failed; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mims_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mims_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_load(path: *const c_char, out: *mut *mut MimsCheckpoint) -> MimsStatus {
    guard(|| {
        let ck = load_checkpoint(&path_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(MimsCheckpoint { inner: ck })), "out")
    })
}

/// # Safety
/// `ck` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_save(ck: *const MimsCheckpoint, path: *const c_char) -> MimsStatus {
    guard(|| {
        let ck = deref(ck, "ck")?;
        save_checkpoint(&ck.inner, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Trains the default desk-scale model on `train_images` synthetic images.
/// `regime` is `supervised`, `mae` or `rcmae`; a negative `epochs` keeps
/// the regime's default.
///
/// # Safety
/// `regime` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_train(
    regime: *const c_char,
    seed: u64,
    epochs: i64,
    train_images: usize,
    out: *mut *mut MimsCheckpoint,
) -> MimsStatus {
    guard(|| {
        let regime: Regime = parse(str_arg(regime, "regime")?)?;
        let mut cfg = TrainConfig::new(regime, seed);
        if let Ok(e) = usize::try_from(epochs) {
            cfg.epochs = e;
        }
        let config = ViTConfig::default();
        let data = generate_synthetic(train_images, &config, config.num_classes, seed, Split::Train)?;
        let model = ViTModel::init(config, seed)?;
        let ck = train(&model, &data, &cfg)?;
        write_out(out, Box::into_raw(Box::new(MimsCheckpoint { inner: ck })), "out")
    })
}

/// # Safety
/// `ck` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_free(ck: *mut MimsCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Number of scalar parameters (student only).
///
/// # Safety
/// `ck` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_param_count(ck: *const MimsCheckpoint, out: *mut usize) -> MimsStatus {
    guard(|| write_out(out, deref(ck, "ck")?.inner.params.numel(), "out"))
}

/// Lowercase hex SHA-256 of the serialised checkpoint, written into `buf`
/// (at least 65 bytes).
///
/// # Safety
/// `ck` must come from this library and `buf` hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_checksum(
    ck: *const MimsCheckpoint,
    buf: *mut c_char,
    len: usize,
) -> MimsStatus {
    guard(|| {
        let hex = deref(ck, "ck")?.inner.checksum()?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len < hex.len() + 1 {
            return Err(Failure::Arg(format!("buffer of {len} bytes, need {}", hex.len() + 1)));
        }
        ptr::copy_nonoverlapping(hex.as_ptr().cast::<c_char>(), buf, hex.len());
        *buf.add(hex.len()) = 0;
        Ok(())
    })
}

fn evaluator(ck: &Checkpoint, loss: Option<&str>, eval_images: usize, eval_seed: u64) -> Result<Evaluator, Failure> {
    let expected = LossKind::for_regime(ck.meta.regime);
    let loss = match loss {
        Some(s) => parse(s)?,
        None => expected,
    };
    let config = &ck.config;
    let data = generate_synthetic(
        eval_images,
        config,
        config.num_classes,
        ck.meta.seed.wrapping_add(EVAL_DATA_SEED_OFFSET),
        Split::Eval,
    )?;
    let mut setup = EvalSetup::new(loss, eval_seed);
    setup.mask_ratio = ck.meta.train_config.mask_ratio;
    setup.consistency_weight = ck.meta.train_config.consistency_weight;
    setup.norm_pix_loss = ck.meta.train_config.norm_pix_loss;
    Ok(Evaluator::new(&ck.model()?, &data, setup, ck.teacher.as_ref())?)
}

/// Mean loss over `eval_images` synthetic held-out images. `loss` is
/// `mae`, `rcmae`, `ce`, or null for the checkpoint's own objective.
///
/// # Safety
/// `ck` must come from this library; `loss` null or NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mims_checkpoint_eval_loss(
    ck: *const MimsCheckpoint,
    loss: *const c_char,
    eval_images: usize,
    eval_seed: u64,
    out: *mut f64,
) -> MimsStatus {
    guard(|| {
        let ck = &deref(ck, "ck")?.inner;
        let ev = evaluator(ck, opt_str_arg(loss, "loss")?, eval_images, eval_seed)?;
        write_out(out, ev.loss(&ck.params)?, "out")
    })
}

/// Evaluates a `resolution × resolution` filter-normalised landscape around
/// the checkpoint using the same evaluation set as
/// [`mims_checkpoint_eval_loss`].
///
/// # Safety
/// As for [`mims_checkpoint_eval_loss`]; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_landscape(
    ck: *const MimsCheckpoint,
    loss: *const c_char,
    eval_images: usize,
    eval_seed: u64,
    direction_seed: u64,
    resolution: usize,
    half_range: f64,
    workers: usize,
    out: *mut *mut MimsGrid,
) -> MimsStatus {
    guard(|| {
        let ck = &deref(ck, "ck")?.inner;
        let ev = evaluator(ck, opt_str_arg(loss, "loss")?, eval_images, eval_seed)?;
        let mut grid =
            landscape(&ev, &ck.params, direction_seed, &FilterPolicy::default(), resolution, half_range, workers)?;
        grid.regime = ck.meta.regime.to_string();
        write_out(out, Box::into_raw(Box::new(MimsGrid { inner: grid })), "out")
    })
}

/// Builds a grid from `resolution²` alpha-major values over coordinates
/// evenly spaced in `[-half_range, half_range]`.
///
/// # Safety
/// `values` must hold `resolution * resolution` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_from_values(
    values: *const f64,
    resolution: usize,
    half_range: f64,
    out: *mut *mut MimsGrid,
) -> MimsStatus {
    guard(|| {
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        let n = resolution.checked_mul(resolution).ok_or_else(|| Failure::Arg("resolution too large".into()))?;
        let v = std::slice::from_raw_parts(values, n);
        let coords = mimscape::landscape::coordinates(resolution, half_range)?;
        let index = |a: f64| coords.iter().position(|&c| c == a).expect("own coordinate");
        let grid = LandscapeGrid::from_fn(resolution, half_range, |a, b| v[index(a) * resolution + index(b)])?;
        write_out(out, Box::into_raw(Box::new(MimsGrid { inner: grid })), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_load_csv(path: *const c_char, out: *mut *mut MimsGrid) -> MimsStatus {
    guard(|| {
        let grid = read_grid_csv(&path_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(MimsGrid { inner: grid })), "out")
    })
}

/// # Safety
/// `grid` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_save_csv(grid: *const MimsGrid, path: *const c_char) -> MimsStatus {
    guard(|| {
        write_grid_csv(&deref(grid, "grid")?.inner, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_free(grid: *mut MimsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Points along each axis.
///
/// # Safety
/// `grid` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_resolution(grid: *const MimsGrid, out: *mut usize) -> MimsStatus {
    guard(|| write_out(out, deref(grid, "grid")?.inner.alphas.len(), "out"))
}

/// Loss at alpha index `i`, beta index `j` (`+inf` for overflowed points).
///
/// # Safety
/// `grid` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_value(grid: *const MimsGrid, i: usize, j: usize, out: *mut f64) -> MimsStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.inner;
        let v = g.losses.get(i).and_then(|row| row.get(j)).ok_or_else(|| {
            Failure::Arg(format!("index ({i}, {j}) outside {}×{} grid", g.alphas.len(), g.betas.len()))
        })?;
        write_out(out, *v, "out")
    })
}

/// Loss at the origin.
///
/// # Safety
/// `grid` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_base_loss(grid: *const MimsGrid, out: *mut f64) -> MimsStatus {
    guard(|| write_out(out, deref(grid, "grid")?.inner.base_loss, "out"))
}

/// Curvature summary; a NaN `epsilon` selects a tenth of the center loss.
///
/// # Safety
/// `grid` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_curvature(
    grid: *const MimsGrid,
    epsilon: f64,
    out: *mut MimsCurvature,
) -> MimsStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.inner;
        let eps = if epsilon.is_nan() { default_epsilon(g.base_loss) } else { epsilon };
        let r = curvature_report(g, eps)?;
        let c = MimsCurvature {
            convexity_fraction: r.convexity_fraction,
            flatness_radius: r.flatness_radius,
            loss_range: r.loss_range,
            center_gap: r.center_gap,
            epsilon: r.epsilon,
        };
        write_out(out, c, "out")
    })
}

/// Writes an SVG figure. `mode` is `contour`, `heatmap` or `both`.
///
/// # Safety
/// `grid` must come from this library; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mims_grid_render_svg(
    grid: *const MimsGrid,
    mode: *const c_char,
    contour_levels: usize,
    log_scale: bool,
    path: *const c_char,
) -> MimsStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.inner;
        let mode: RenderMode = parse(str_arg(mode, "mode")?)?;
        let svg = render_svg(g, &RenderSpec { mode, contour_levels, log_scale })?;
        std::fs::write(path_arg(path, "path")?, svg).map_err(Error::from)?;
        Ok(())
    })
}
