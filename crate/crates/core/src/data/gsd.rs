//! `GSDD` container: a distilled set stored as bf16.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GSDD"
//!      4     2  version (u16) = 1
//!      6     2  width (u16)
//!      8     2  height (u16)
//!     10     1  channels (u8)
//!     11     2  image count N (u16)
//!     13     2  Gaussians per image M (u16)
//!     15     2  class count (u16)
//!     17   2*N  labels (u16 each)
//!   17+2N  18NM  parameters (bf16 bits), flat parameter order
//! ```
//!
//! File size is `17 + 2N + 2*9*N*M` bytes.

use std::fs;
use std::path::Path;

use half::bf16;

use crate::error::{GsddError, Result};
use crate::layout::{DistilledSet, PARAMS_PER_GAUSSIAN};

pub const GSD_MAGIC: &[u8; 4] = b"GSDD";
pub const GSD_VERSION: u16 = 1;
pub const GSD_HEADER_LEN: usize = 17;

pub fn gsd_file_size(num_images: usize, gaussians_per_image: usize) -> usize {
    GSD_HEADER_LEN + 2 * num_images + 2 * num_images * gaussians_per_image * PARAMS_PER_GAUSSIAN
}

fn to_u16(what: &str, v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| GsddError::Format(format!("{what} = {v} exceeds u16")))
}

pub fn encode_gsd(set: &DistilledSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut out = Vec::with_capacity(gsd_file_size(set.num_images, set.gaussians_per_image));
    out.extend_from_slice(GSD_MAGIC);
    out.extend_from_slice(&GSD_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u16("width", set.width)?.to_le_bytes());
    out.extend_from_slice(&to_u16("height", set.height)?.to_le_bytes());
    out.push(set.channels as u8);
    out.extend_from_slice(&to_u16("image count", set.num_images)?.to_le_bytes());
    out.extend_from_slice(&to_u16("gaussians per image", set.gaussians_per_image)?.to_le_bytes());
    out.extend_from_slice(&to_u16("class count", set.class_count)?.to_le_bytes());
    for &l in &set.labels {
        out.extend_from_slice(&to_u16("label", l)?.to_le_bytes());
    }
    for &p in &set.params {
        out.extend_from_slice(&bf16::from_f32(p).to_bits().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_gsd(bytes: &[u8]) -> Result<DistilledSet> {
    if bytes.len() < GSD_HEADER_LEN {
        return Err(GsddError::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != GSD_MAGIC {
        return Err(GsddError::Format("bad magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != GSD_VERSION {
        return Err(GsddError::Format(format!("unsupported version {version}")));
    }
    let width = u16_at(6);
    let height = u16_at(8);
    let channels = bytes[10] as usize;
    let n = u16_at(11);
    let m = u16_at(13);
    let class_count = u16_at(15);
    let expected = gsd_file_size(n, m);
    if bytes.len() != expected {
        return Err(GsddError::Format(format!(
            "size {} does not match header ({expected} expected)",
            bytes.len()
        )));
    }
    let labels = (0..n).map(|i| u16_at(GSD_HEADER_LEN + 2 * i)).collect();
    let params = bytes[GSD_HEADER_LEN + 2 * n..]
        .chunks_exact(2)
        .map(|b| bf16::from_bits(u16::from_le_bytes([b[0], b[1]])).to_f32())
        .collect();
    DistilledSet::from_parts(width, height, channels, m, class_count, params, labels)
}

pub fn save_gsd(set: &DistilledSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_gsd(set)?)?;
    Ok(())
}

pub fn load_gsd(path: impl AsRef<Path>) -> Result<DistilledSet> {
    decode_gsd(&fs::read(path)?)
}
