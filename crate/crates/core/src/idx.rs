//! IDX (MNIST-style) unsigned-byte tensors.
//!
//! Layout: two zero bytes, a type byte (`0x08` = u8), a dimension count,
//! big-endian `u32` dimensions, then the raw bytes in row-major order.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;
use crate::vit::ViTConfig;

const UBYTE: u8 = 0x08;

/// Decoded IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != UBYTE {
        return Err(format_err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(format_err(3, "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let at = 4 + 4 * i;
        let raw = bytes.get(at..at + 4).ok_or_else(|| format_err(bytes.len(), "truncated dimension header"))?;
        dims.push(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize);
    }
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    if bytes.len() < start + len {
        return Err(format_err(bytes.len(), format!("truncated payload: expected {len} bytes after offset {start}")));
    }
    if bytes.len() > start + len {
        return Err(format_err(start + len, "trailing bytes after payload"));
    }
    Ok(IdxArray { dims, data: bytes[start..].to_vec() })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Center-crops or zero-pads a `[C, h, w]` plane stack to `[C, size, size]`.
fn fit(src: &[f64], c: usize, h: usize, w: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * size * size];
    let off = |from: usize| from as isize - size as isize;
    let (dy, dx) = (off(h) / 2, off(w) / 2);
    for ch in 0..c {
        for y in 0..size {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..size {
                let sx = x as isize + dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * size + y) * size + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

/// Builds a dataset from decoded image and label arrays. Pixels are scaled
/// to `[0, 1]`; images are center-cropped or padded to the configured size.
pub fn dataset_from_idx(images: &IdxArray, labels: &IdxArray, config: &ViTConfig, split: Split) -> Result<Dataset> {
    let (n, c, h, w) = match images.dims.as_slice() {
        [n, h, w] => (*n, 1, *h, *w),
        [n, c, h, w] => (*n, *c, *h, *w),
        d => return Err(contract(format!("image array must have 3 or 4 dimensions, got {d:?}"))),
    };
    if c != config.channels {
        return Err(contract(format!("{c} channels in file, config expects {}", config.channels)));
    }
    if labels.dims != [n] {
        return Err(contract(format!("label dims {:?} do not match {n} images", labels.dims)));
    }
    let plane = c * h * w;
    let size = config.image_size;
    let images = images
        .data
        .chunks_exact(plane)
        .map(|raw| {
            let px: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::from_parts(vec![c, size, size], fit(&px, c, h, w, size))
        })
        .collect();
    let labels = labels.data.iter().map(|&l| l as usize).collect();
    Dataset::new(images, labels, config.num_classes, split)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, config: &ViTConfig, split: Split) -> Result<Dataset> {
    let images = parse_idx(&fs::read(images_path)?)?;
    let labels = parse_idx(&fs::read(labels_path)?)?;
    dataset_from_idx(&images, &labels, config, split)
}

/// Quantises a dataset back to IDX arrays (`round(255·x)`).
pub fn dataset_to_idx(data: &Dataset) -> Result<(IdxArray, IdxArray)> {
    let shape = data.image_shape();
    let n = data.len();
    let dims = if shape[0] == 1 { vec![n, shape[1], shape[2]] } else { vec![n, shape[0], shape[1], shape[2]] };
    let mut bytes = Vec::with_capacity(n * shape.iter().product::<usize>());
    for im in data.images() {
        bytes.extend(im.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(n);
    for &l in data.labels() {
        labels.push(u8::try_from(l).map_err(|_| contract(format!("label {l} does not fit in a byte")))?);
    }
    Ok((IdxArray { dims, data: bytes }, IdxArray { dims: vec![n], data: labels }))
}

pub fn save_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = dataset_to_idx(data)?;
    fs::write(images_path, encode_idx(&images))?;
    fs::write(labels_path, encode_idx(&labels))?;
    Ok(())
}
