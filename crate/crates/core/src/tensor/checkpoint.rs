//! Binary checkpoint format.
//!
//! ```text
//! "CCTG" | u32 version | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u8 dtype | u8 rank | u32 dims[rank] | raw LE values
//! ```
//! All integers little-endian. dtype 0 = f64, 1 = f32. A JSON manifest with
//! the architecture config sits next to the file as `<path>.json`.

use super::{ModelState, Tensor};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"CCTG";
const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&state.version.to_le_bytes());
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, t) in state.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.rank() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version == 0 || version > ModelState::VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut state = ModelState::new();
    state.version = version;
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
        };
        state.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(state)
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its JSON manifest sidecar.
pub fn save_checkpoint(state: &ModelState, path: &Path, manifest: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state))?;
    let mut manifest = manifest.clone();
    if let serde_json::Value::Object(map) = &mut manifest {
        map.insert(
            "frozen_groups".into(),
            serde_json::Value::from(state.frozen_groups().cloned().collect::<Vec<_>>()),
        );
    }
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a checkpoint and its manifest (`null` when the sidecar is absent).
pub fn load_checkpoint(path: &Path) -> Result<(ModelState, serde_json::Value)> {
    let mut state = decode_checkpoint(&std::fs::read(path)?)?;
    let mp = manifest_path(path);
    let manifest = if mp.exists() {
        serde_json::from_str(&std::fs::read_to_string(mp)?)?
    } else {
        serde_json::Value::Null
    };
    if let Some(groups) = manifest.get("frozen_groups").and_then(|g| g.as_array()) {
        for g in groups.iter().filter_map(|g| g.as_str()) {
            state.freeze(g);
        }
    }
    Ok((state, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelState {
        let mut s = ModelState::new();
        s.insert("det.w", Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, -0.0]).unwrap())
            .unwrap();
        s.insert("det.b", Tensor::vector(vec![f64::MAX])).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&sample());
        assert_eq!(&bytes[..4], b"CCTG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first tensor in name order is "det.b"
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
        assert_eq!(&bytes[16..21], b"det.b");
        assert_eq!(bytes[21], 0);
        assert_eq!(bytes[22], 1);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = sample();
        let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(back.fingerprint(), s.fingerprint());
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
        let bytes = encode_checkpoint(&sample());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn reads_f32_payloads() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CCTG");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        bytes.push(1);
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let s = decode_checkpoint(&bytes).unwrap();
        assert_eq!(s.get("x").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn sidecar_keeps_frozen_groups() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cctg");
        let mut s = sample();
        s.freeze("det");
        save_checkpoint(&s, &p, &serde_json::json!({"arch": "x"})).unwrap();
        let (back, manifest) = load_checkpoint(&p).unwrap();
        assert!(back.is_frozen("det.w"));
        assert_eq!(manifest["arch"], "x");
    }
}
