use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Frame, ValidMask};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.into(),
        message: e.to_string(),
    }
}

fn encode(path: &Path, width: usize, height: usize, color: ::png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = ::png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(::png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
        w.write_image_data(data).map_err(|e| png_err(path, e))?;
    }
    Ok(buf)
}

fn decode(path: &Path) -> Result<(usize, usize, ::png::ColorType, Vec<u8>)> {
    let bytes = super::read_bytes(path)?;
    let mut dec = ::png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(::png::Transformations::EXPAND | ::png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

/// 8-bit RGB PNG; each value is stored as `round(v * 255)` after clamping to `[0, 1]`.
pub fn write_frame_png(frame: &Frame<f32>, path: &Path) -> Result<()> {
    let data: Vec<u8> = frame
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let bytes = encode(path, frame.width(), frame.height(), ::png::ColorType::Rgb, &data)?;
    super::write_atomic(path, &bytes)
}

pub fn read_frame_png(path: &Path) -> Result<Frame<f32>> {
    let (w, h, color, buf) = decode(path)?;
    let data: Vec<f32> = match color {
        ::png::ColorType::Rgb => buf.iter().map(|&b| b as f32 / 255.0).collect(),
        ::png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|b| b as f32 / 255.0)
            .collect(),
        ::png::ColorType::Grayscale => buf.iter().flat_map(|&b| [b; 3]).map(|b| b as f32 / 255.0).collect(),
        other => return Err(png_err(path, format!("unsupported color type {other:?}"))),
    };
    Frame::from_vec(h, w, data)
}

/// Grayscale PNG with 255 for valid and 0 for invalid pixels.
pub fn write_mask_png(mask: &ValidMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let bytes = encode(path, mask.width(), mask.height(), ::png::ColorType::Grayscale, &data)?;
    super::write_atomic(path, &bytes)
}

pub fn read_mask_png(path: &Path) -> Result<ValidMask> {
    let (w, h, color, buf) = decode(path)?;
    if color != ::png::ColorType::Grayscale {
        return Err(png_err(path, format!("mask must be grayscale, got {color:?}")));
    }
    ValidMask::from_vec(h, w, buf.iter().map(|&b| (b >= 128) as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    #[test]
    fn quantized_frame_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f: Frame<f32> = Field::from_fn(4, 6, |x, y| [x as f32 / 5.0, y as f32 / 3.0, 0.123]).quantize8();
        write_frame_png(&f, &p).unwrap();
        assert_eq!(read_frame_png(&p).unwrap(), f);
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = ValidMask::from_fn(3, 5, |x, y| (x + y) % 2 == 0);
        write_mask_png(&m, &p).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), m);
    }
}
