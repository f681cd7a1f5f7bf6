//! CIFAR-10 / CIFAR-100 binary batch files.
//!
//! CIFAR-10 records are 3073 bytes: one label byte, then 1024 red, 1024
//! green and 1024 blue bytes, each plane row-major over 32x32. CIFAR-100
//! records carry a coarse and a fine label byte (3074 bytes); the fine
//! label is used.

use std::fs;
use std::path::Path;

use super::dataset::LabeledImageDataset;
use crate::error::{GsddError, Result};
use crate::raster::ImageBuffer;

pub const CIFAR_SIDE: usize = 32;
const PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

fn label_bytes(classes: usize) -> Result<usize> {
    match classes {
        10 => Ok(1),
        100 => Ok(2),
        _ => Err(GsddError::Config(format!(
            "CIFAR class count {classes} not in {{10, 100}}"
        ))),
    }
}

pub fn record_size(classes: usize) -> Result<usize> {
    Ok(label_bytes(classes)? + 3 * PLANE)
}

/// Parses raw bytes into images with pixels in `[0, 1]` (no normalization).
pub fn parse_cifar_bytes(bytes: &[u8], classes: usize) -> Result<(Vec<ImageBuffer>, Vec<usize>)> {
    let lb = label_bytes(classes)?;
    let rec = lb + 3 * PLANE;
    if !bytes.len().is_multiple_of(rec) {
        return Err(GsddError::Format(format!(
            "{} bytes is not a multiple of the {rec}-byte record",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / rec);
    let mut labels = Vec::with_capacity(bytes.len() / rec);
    for r in bytes.chunks_exact(rec) {
        let label = r[lb - 1] as usize;
        if label >= classes {
            return Err(GsddError::Format(format!(
                "label {label} >= {classes} classes"
            )));
        }
        let planes = &r[lb..];
        let mut pixels = Vec::with_capacity(3 * PLANE);
        for i in 0..PLANE {
            for c in 0..3 {
                pixels.push(planes[c * PLANE + i] as f32 / 255.0);
            }
        }
        images.push(ImageBuffer::from_pixels(CIFAR_SIDE, CIFAR_SIDE, 3, pixels)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Loads and concatenates batch files, scales to `[0, 1]`, then normalizes
/// per channel with statistics of the loaded data.
pub fn load_cifar_binary<P: AsRef<Path>>(
    paths: &[P],
    classes: usize,
) -> Result<LabeledImageDataset> {
    load_cifar_binary_raw(paths, classes)?.normalized()
}

/// As [`load_cifar_binary`] without normalization.
pub fn load_cifar_binary_raw<P: AsRef<Path>>(
    paths: &[P],
    classes: usize,
) -> Result<LabeledImageDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = fs::read(p)?;
        let (i, l) = parse_cifar_bytes(&bytes, classes)?;
        images.extend(i);
        labels.extend(l);
    }
    if images.is_empty() {
        return Err(GsddError::Empty("no CIFAR records".into()));
    }
    LabeledImageDataset::new(images, labels, classes)
}

/// Encodes 32x32 RGB images with pixels in `[0, 1]` as CIFAR records.
/// CIFAR-100 output writes the fine label into both label bytes.
pub fn encode_cifar(images: &[ImageBuffer], labels: &[usize], classes: usize) -> Result<Vec<u8>> {
    let lb = label_bytes(classes)?;
    let mut out = Vec::with_capacity(images.len() * (lb + 3 * PLANE));
    for (img, &label) in images.iter().zip(labels) {
        if (img.width, img.height, img.channels) != (CIFAR_SIDE, CIFAR_SIDE, 3) {
            return Err(GsddError::Geometry("CIFAR records are 32x32x3".into()));
        }
        if label >= classes {
            return Err(GsddError::Format(format!("label {label} >= {classes}")));
        }
        out.extend(std::iter::repeat_n(label as u8, lb));
        for c in 0..3 {
            for i in 0..PLANE {
                let v = (img.pixels[i * 3 + c].clamp(0.0, 1.0) * 255.0).round();
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}
