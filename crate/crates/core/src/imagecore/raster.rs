use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, ImageFormat, Luma};
use serde::Deserialize;

use super::ImageGrid;
use crate::error::{Error, Result};

/// Sidecar header for raw little-endian `f32` rasters: `<file>.json`.
#[derive(Deserialize)]
struct RawHeader {
    width: usize,
    height: usize,
    #[serde(default = "one")]
    depth: usize,
}

fn one() -> usize {
    1
}

fn is_raw(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("raw" | "f32")
    )
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Load a grayscale raster and min-max normalize it into [0, 1].
///
/// PNG and PGM (8 or 16 bit) are decoded directly. Files ending in `.raw` or
/// `.f32` hold packed little-endian `f32` samples described by a JSON sidecar
/// at `<file>.json` with `width`, `height` and optional `depth`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_raw(path) {
        let side = sidecar_path(path);
        let header = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let header: RawHeader = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        return decode_raw_f32(&bytes, header.width, header.height, header.depth);
    }
    decode_raster(&bytes)
}

fn decode_raw_f32(bytes: &[u8], width: usize, height: usize, depth: usize) -> Result<ImageGrid> {
    let expected = width * height * depth * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raw raster holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(ImageGrid::new(width, height, depth, data)?.normalized())
}

/// Decode an in-memory PNG/PGM into a normalized single-slice grid.
pub fn decode_raster(bytes: &[u8]) -> Result<ImageGrid> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(f64::from).collect();
    Ok(ImageGrid::new(w as usize, h as usize, 1, data)?.normalized())
}

fn require_planar(image: &ImageGrid) -> Result<()> {
    if image.depth() != 1 {
        return Err(Error::InvalidArgument(format!(
            "PNG export needs a single slice, image has depth {}",
            image.depth()
        )));
    }
    Ok(())
}

/// Encode values in [0, 1] as a 16-bit grayscale PNG (`v * 65535`, rounded).
pub fn encode_png16(image: &ImageGrid) -> Result<Vec<u8>> {
    require_planar(image)?;
    let raw: Vec<u16> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw)
            .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Encode values in [0, 1] as an 8-bit grayscale PNG.
pub fn encode_png8(image: &ImageGrid) -> Result<Vec<u8>> {
    require_planar(image)?;
    let raw: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png16(image: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png16(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
