use std::fs;
use std::path::Path;

use super::dataset::ChannelStats;
use crate::error::{GsddError, Result};
use crate::raster::ImageBuffer;

/// De-normalizes, clamps to `[0, 1]` and quantizes to 8 bits with
/// round-half-up. Grayscale is replicated to RGB.
pub fn to_rgb8(img: &ImageBuffer, stats: &ChannelStats) -> Vec<u8> {
    let ch = img.channels;
    let mut out = Vec::with_capacity(img.width * img.height * 3);
    for px in img.pixels.chunks_exact(ch) {
        for c in 0..3 {
            let src = if ch == 1 { 0 } else { c };
            let v = stats.denormalize_value(src, px[src]).clamp(0.0, 1.0);
            out.push((v * 255.0 + 0.5).floor() as u8);
        }
    }
    out
}

/// Binary PPM: `P6\n{w} {h}\n255\n` followed by RGB bytes, row-major.
pub fn encode_ppm(img: &ImageBuffer, stats: &ChannelStats) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_rgb8(img, stats));
    out
}

/// Parses a P6 file as written by [`encode_ppm`]. Returns `(w, h, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GsddError::Format("truncated PPM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|e| GsddError::Format(e.to_string()))?,
        );
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(GsddError::Format("only 8-bit P6 is supported".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| GsddError::Format(e.to_string()))
    };
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != w * h * 3 {
        return Err(GsddError::Format(format!(
            "{} pixel bytes for {w}x{h}",
            data.len()
        )));
    }
    Ok((w, h, data.to_vec()))
}

pub fn export_ppm(img: &ImageBuffer, stats: &ChannelStats, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img, stats))?;
    Ok(())
}

pub fn export_png(img: &ImageBuffer, stats: &ChannelStats, path: impl AsRef<Path>) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, to_rgb8(img, stats))
        .ok_or_else(|| GsddError::Image("buffer size".into()))?;
    buf.save(path).map_err(|e| GsddError::Image(e.to_string()))
}

/// Writes PNG for a `.png` extension and PPM otherwise.
pub fn export_image(img: &ImageBuffer, stats: &ChannelStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => export_png(img, stats, path),
        _ => export_ppm(img, stats, path),
    }
}
