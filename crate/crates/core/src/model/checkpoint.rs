//! Binary checkpoint: versioned header, JSON config, named f32 tensor table.
//!
//! Layout (all integers u32 little-endian):
//! `"SFCK"`, version, JSON length, JSON `{"model": .., "extra": ..}`, tensor
//! count, then per tensor: name length, UTF-8 name, rank, dims, f32 LE data.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::SensorFlowNet;
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SFCK";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: Parameters,
    /// Free-form metadata (training step, normalization stats, ...).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    SensorFlowNet::new(&ck.model)?
        .check_parameters(&ck.params)
        .map_err(|e| Error::Checkpoint { path: path.into(), message: e.to_string() })?;
    let header = serde_json::to_vec(&Header { model: ck.model.clone(), extra: ck.extra.clone() })
        .map_err(|e| Error::Checkpoint { path: path.into(), message: e.to_string() })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize);
    put_u32(&mut buf, header.len());
    buf.extend_from_slice(&header);
    put_u32(&mut buf, ck.params.tensors().len());
    for (name, t) in ck.params.names().iter().zip(ck.params.tensors()) {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut buf, d);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

struct Reader<'a> {
    path: &'a Path,
    src: std::io::BufReader<std::fs::File>,
}

impl Reader<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint { path: self.path.into(), message: message.into() }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.src.read_exact(&mut b).map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, src: std::io::BufReader::new(file) };
    if r.bytes(4, "magic")? != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.fail(format!("format version {version}, this build reads version {CHECKPOINT_VERSION}")));
    }
    let len = r.u32("header length")?;
    let raw = r.bytes(len, "header")?;
    let header: Header = serde_json::from_slice(&raw).map_err(|e| r.fail(format!("header: {e}")))?;
    let net = SensorFlowNet::new(&header.model).map_err(|e| r.fail(e.to_string()))?;
    let specs = net.param_set().specs();
    let count = r.u32("tensor count")?;
    if count != specs.len() {
        return Err(r.fail(format!("{count} tensors, model config needs {}", specs.len())));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for spec in specs {
        let nlen = r.u32("tensor name length")?;
        let name = String::from_utf8(r.bytes(nlen, "tensor name")?).map_err(|_| r.fail("tensor name is not UTF-8"))?;
        if name != spec.name {
            return Err(r.fail(format!("expected tensor {}, found {name}", spec.name)));
        }
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        if shape != spec.shape {
            return Err(r.fail(format!("tensor {name}: shape {shape:?}, model config needs {:?}", spec.shape)));
        }
        let n: usize = shape.iter().product();
        let data = r
            .bytes(4 * n, &format!("tensor {name}"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if r.src.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(r.fail("trailing bytes after tensor table"));
    }
    Ok(Checkpoint { model: header.model, params: Parameters::from_parts(names, tensors), extra: header.extra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;

    fn sample() -> Checkpoint {
        let model = ModelConfig { height: 16, width: 32, encoder_channels: vec![4, 8], ..ModelConfig::default() };
        let params = init_parameters(&model, 3).unwrap();
        Checkpoint { model, params, extra: serde_json::json!({"step": 12}) }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sfck");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.params.bitwise_eq(&ck.params));
        assert_eq!(back.model, ck.model);
        assert_eq!(back.extra, ck.extra);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.sfck");
        save_checkpoint(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sfck");
        save_checkpoint(&path, &sample()).unwrap();
        // rewrite the header to claim a wider first stage
        let bytes = std::fs::read(&path).unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        header["model"]["encoder_channels"] = serde_json::json!([5, 8]);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[12 + len..]);
        std::fs::write(&path, &out).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfck");
        save_checkpoint(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));
    }
}
