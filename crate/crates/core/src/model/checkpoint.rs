//! Binary checkpoint container: magic "UNMTCKPT", u32 version, JSON
//! metadata, then named tensor records
//! [u16 name len | name | u8 dtype (0=f32,1=f64) | u8 rank | u32 dims.. | raw LE data].

use super::{ModelCfg, ModelParams, TensorMut, TensorRef};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"UNMTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CkptMeta {
    pub cfg: ModelCfg,
    pub vocab_hash: String,
    pub step: u64,
    /// Schedule stage that produced this checkpoint.
    pub stage: String,
    /// Language codes in language-id order.
    pub langs: Vec<String>,
}

pub fn save_checkpoint(params: &ModelParams, meta: &CkptMeta, path: &Path) -> Result<()> {
    let mut w = Vec::new();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_json = serde_json::to_vec(meta)?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    w.write_all(&meta_json)?;
    for (name, tensor) in params.named_tensors() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[1u8])?; // f64
        match tensor {
            TensorRef::M(m) => {
                w.write_all(&[2u8])?;
                w.write_all(&(m.nrows() as u32).to_le_bytes())?;
                w.write_all(&(m.ncols() as u32).to_le_bytes())?;
                for v in m.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorRef::V(v) => {
                w.write_all(&[1u8])?;
                w.write_all(&(v.len() as u32).to_le_bytes())?;
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    fs::write(path, w)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64_vec(&mut self, n: usize, dtype: u8) -> Result<Vec<f64>> {
        match dtype {
            0 => {
                let raw = self.take(n * 4)?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect())
            }
            1 => {
                let raw = self.take(n * 8)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            }
            other => Err(Error::Checkpoint(format!("unknown dtype tag {}", other))),
        }
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Loads a checkpoint, verifying magic, version and tensor shapes against
/// the embedded config. When `expect_vocab_hash` is given it must match the
/// stored one.
pub fn load_checkpoint(path: &Path, expect_vocab_hash: Option<&str>) -> Result<(ModelParams, CkptMeta)> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(8).map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta: CkptMeta = serde_json::from_slice(r.take(meta_len)?)?;
    if let Some(expect) = expect_vocab_hash {
        if meta.vocab_hash != expect {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint built for {}, expected {}",
                meta.vocab_hash, expect
            )));
        }
    }

    let mut params = ModelParams::zeros_like(&meta.cfg);
    let mut filled = std::collections::BTreeSet::new();
    while !r.done() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = r.u8()?;
        let rank = r.u8()?;
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let count: usize = dims.iter().product();
        let data = r.f64_vec(count, dtype)?;

        let mut tensors = params.named_tensors_mut();
        let slot = tensors
            .iter_mut()
            .find(|(n, _)| n == &name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor '{}'", name)))?;
        match &mut slot.1 {
            TensorMut::M(m) => {
                if dims != [m.nrows(), m.ncols()] {
                    return Err(Error::Checkpoint(format!(
                        "tensor '{}' shape {:?} does not match config shape {:?}",
                        name,
                        dims,
                        [m.nrows(), m.ncols()]
                    )));
                }
                m.as_slice_mut().unwrap().copy_from_slice(&data);
            }
            TensorMut::V(v) => {
                if dims != [v.len()] {
                    return Err(Error::Checkpoint(format!(
                        "tensor '{}' shape {:?} does not match config shape {:?}",
                        name,
                        dims,
                        [v.len()]
                    )));
                }
                v.as_slice_mut().unwrap().copy_from_slice(&data);
            }
        }
        filled.insert(name);
    }
    let expected = params.named_tensors().len();
    if filled.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, config requires {}",
            filled.len(),
            expected
        )));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelCfg {
        ModelCfg {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 12,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 8,
            n_langs: 2,
            dropout: 0.0,
            vocab_size: 10,
            seed: 5,
        }
    }

    fn meta() -> CkptMeta {
        CkptMeta {
            cfg: cfg(),
            vocab_hash: "abc123".into(),
            step: 42,
            stage: "step1".into(),
            langs: vec!["la".into(), "lb".into()],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let params = ModelParams::init(&cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&params, &meta(), &p).unwrap();
        let (loaded, m) = load_checkpoint(&p, Some("abc123")).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(m, meta());
        // two saves of the same params are byte-identical
        let p2 = dir.path().join("m2.ckpt");
        save_checkpoint(&params, &meta(), &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_is_detected() {
        let params = ModelParams::init(&cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&params, &meta(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_checkpoint(&cut, None).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{}", err);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        fs::write(&p, b"NOTACKPTxxxxxxxxxxxxx").unwrap();
        assert!(load_checkpoint(&p, None).is_err());
    }

    #[test]
    fn vocab_hash_mismatch_rejected() {
        let params = ModelParams::init(&cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&params, &meta(), &p).unwrap();
        let err = load_checkpoint(&p, Some("otherhash")).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"));
        // without an expectation it loads fine
        assert!(load_checkpoint(&p, None).is_ok());
    }

    #[test]
    fn shape_mismatch_rejected() {
        // params saved under one config, metadata claiming another
        let params = ModelParams::init(&cfg()).unwrap();
        let mut bad_meta = meta();
        bad_meta.cfg.vocab_size = 12;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&params, &bad_meta, &p).unwrap();
        let err = load_checkpoint(&p, None).unwrap_err();
        assert!(err.to_string().contains("shape"), "{}", err);
    }
}
