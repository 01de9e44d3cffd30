//! Image and texture persistence.
//!
//! Two formats: 8-bit PNG for inspection and a lossless raw container
//! (`CACRAW1\0`, then `u32` height, width, channels, then `f32` HWC values,
//! all little-endian) for resuming and evaluating textures exactly.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::texture::TextureMap;

const RAW_MAGIC: &[u8; 8] = b"CACRAW1\0";

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// HWC float image.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode_raw(img: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + img.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for d in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<RawImage> {
    if bytes.len() < 20 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::format(path, "not a raw image file"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::format(path, format!("expected {} bytes of data, found {}", 4 * n, bytes.len() - 20)));
    }
    let data = bytes[20..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(RawImage {
        height,
        width,
        channels,
        data,
    })
}

pub fn save_raw(path: &Path, img: &RawImage) -> Result<()> {
    write_atomic(path, &encode_raw(img))
}

pub fn load_raw(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// Saves an RGB image in `[0, 1]` as 8-bit PNG.
pub fn save_png(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut buf), width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        let bytes: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_image_data(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        w.finish().map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &buf)
}

/// Loads an 8-bit RGB or RGBA PNG into `[0, 1]` floats (alpha dropped).
pub fn load_png(path: &Path) -> Result<RawImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::format(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            let rgb = if stride < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok(RawImage {
        height: h,
        width: w,
        channels: 3,
        data,
    })
}

pub fn save_texture(dir: &Path, stem: &str, tex: &TextureMap) -> Result<()> {
    let raw = RawImage {
        height: tex.height,
        width: tex.width,
        channels: 3,
        data: tex.rgb.clone(),
    };
    save_raw(&dir.join(format!("{stem}.raw")), &raw)?;
    save_png(&dir.join(format!("{stem}.png")), tex.width, tex.height, &tex.rgb)
}

/// Loads a texture from `.raw` (exact) or `.png` (8-bit), keeping `like`'s
/// size and trainable mask.
pub fn load_texture(path: &Path, like: &TextureMap) -> Result<TextureMap> {
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path)?,
        _ => load_raw(path)?,
    };
    if img.channels != 3 || img.width != like.width || img.height != like.height {
        return Err(Error::format(
            path,
            format!("texture is {}x{}x{}, mesh expects {}x{}x3", img.height, img.width, img.channels, like.height, like.width),
        ));
    }
    like.with_rgb(img.data).map_err(|e| Error::format(path, e.to_string()))
}

/// Builds a CSV in memory and writes it to `path` atomically.
pub fn write_csv(path: &Path, rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).map_err(|e| Error::format(path, e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = RawImage {
            height: 2,
            width: 3,
            channels: 3,
            data: (0..18).map(|i| i as f32 / 17.0 + 1e-7).collect(),
        };
        let p = dir.path().join("a.raw");
        save_raw(&p, &img).unwrap();
        assert_eq!(load_raw(&p).unwrap(), img);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let img = RawImage {
            height: 1,
            width: 1,
            channels: 3,
            data: vec![0.1, 0.2, 0.3],
        };
        let bytes = encode_raw(&img);
        let err = decode_raw(&bytes[..bytes.len() - 1], Path::new("x.raw")).unwrap_err();
        assert!(err.to_string().contains("x.raw"));
        assert!(decode_raw(b"nonsense", Path::new("y")).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let rgb: Vec<f32> = (0..4 * 5 * 3).map(|i| (i % 7) as f32 / 6.0).collect();
        let p = dir.path().join("sub/t.png");
        save_png(&p, 5, 4, &rgb).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!((back.width, back.height), (5, 4));
        for (a, b) in rgb.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
