//! Middlebury `.flo`: f32 magic 202021.25, i32 width, i32 height, then
//! `width * height` interleaved `(u, v)` f32 pairs, all little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo(flow: &FlowField<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.data().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField<f32>> {
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4-byte slice") };
    if bytes.len() < 4 {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < 12 {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w < 0 || h < 0 {
        return Err(Error::InvalidInput(format!(
            "{}: negative dimensions {w}x{h}",
            path.display()
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * (w as u64) * (h as u64);
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    FlowField::from_vec(h, w, data)
}

pub fn write_flo(flow: &FlowField<f32>, path: &Path) -> Result<()> {
    if !flow.all_finite() {
        return Err(Error::InvalidInput(format!(
            "refusing to write non-finite flow to {}",
            path.display()
        )));
    }
    super::write_atomic(path, &encode_flo(flow))
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    decode_flo(&super::read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize) -> FlowField<f32> {
        Field::from_fn(h, w, |x, y| [x as f32 * 0.5 - 1.0, (y * w + x) as f32 * -0.25])
    }

    #[test]
    fn header_layout() {
        let b = encode_flo(&sample(5, 7));
        assert_eq!(b.len(), 12 + 8 * 35);
        assert_eq!(&b[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(&b[4..8], &7i32.to_le_bytes());
        assert_eq!(&b[8..12], &5i32.to_le_bytes());
        // first pixel (u, v) = (-1, 0)
        assert_eq!(&b[12..16], &(-1.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut b = encode_flo(&sample(5, 7));
        b[0..4].copy_from_slice(&0.0f32.to_le_bytes());
        let err = decode_flo(&b, Path::new("x.flo")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let b = encode_flo(&sample(5, 7));
        let err = decode_flo(&b[..b.len() - 4], Path::new("x.flo")).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { .. }));
        assert!(err.to_string().contains("size mismatch"));
    }

    #[test]
    fn file_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let f = Field::from_fn(7, 5, |x, y| [(x as f32).sin() * 3.1, (y as f32 + 0.1).ln()]);
        write_flo(&f, &p).unwrap();
        let g = read_flo(&p).unwrap();
        let bits = |f: &FlowField<f32>| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f), bits(&g));
        assert!(matches!(read_flo(&dir.path().join("missing.flo")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_any_finite(h in 1usize..9, w in 1usize..9, seed in any::<u32>()) {
            let f = Field::from_fn(h, w, |x, y| {
                let k = (x * 31 + y * 17) as u32 ^ seed;
                [f32::from_bits(k % 0x7f00_0000), -(k as f32) * 1e-3]
            });
            let g = decode_flo(&encode_flo(&f), Path::new("p.flo")).unwrap();
            prop_assert_eq!(f, g);
        }
    }
}
