//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"UMTP"
//! version u32
//! vocab_size u32
//! vocab_hash u64
//! dim count u32, then per dim:   name (u32 len + utf8), value u32
//! param count u32, then per param: name (u32 len + utf8), rank u32,
//!                                  extents u32 each, data f32 LE
//! ```
//!
//! Saving identical state produces byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"UMTP";
const VERSION: u32 = 1;
const MAX_NAME_LEN: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab_size: u32,
    pub vocab_hash: u64,
    pub dims: Vec<(String, u32)>,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn dim(&self, name: &str) -> Result<u32> {
        self.dims
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Checkpoint(format!("missing dimension {name}")))
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        for (i, (name, _)) in self.params.iter().enumerate() {
            if self.params[i + 1..].iter().any(|(n, _)| n == name) {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, self.vocab_size)?;
        w.write_all(&self.vocab_hash.to_le_bytes())?;
        write_u32(&mut w, self.dims.len() as u32)?;
        for (name, value) in &self.dims {
            write_str(&mut w, name)?;
            write_u32(&mut w, *value)?;
        }
        write_u32(&mut w, self.params.len() as u32)?;
        for (name, t) in &self.params {
            write_str(&mut w, name)?;
            write_u32(&mut w, t.rank() as u32)?;
            for &d in t.shape() {
                write_u32(&mut w, d as u32)?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let vocab_size = read_u32(&mut r)?;
        let mut hash = [0u8; 8];
        r.read_exact(&mut hash)?;
        let vocab_hash = u64::from_le_bytes(hash);

        let n_dims = read_u32(&mut r)?;
        let mut dims = Vec::with_capacity(n_dims as usize);
        for _ in 0..n_dims {
            let name = read_str(&mut r)?;
            let value = read_u32(&mut r)?;
            dims.push((name, value));
        }

        let n_params = read_u32(&mut r)?;
        let mut params = Vec::with_capacity(n_params as usize);
        for _ in 0..n_params {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)?;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
            params.push((name, t));
        }

        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
        }
        Ok(Self { vocab_size, vocab_hash, dims, params })
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_NAME_LEN {
        return Err(Error::Checkpoint(format!("name length {len} exceeds limit")));
    }
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("name is not utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            vocab_size: 56,
            vocab_hash: 0xDEAD_BEEF_0BAD_F00D,
            dims: vec![("d_model".into(), 64), ("n_layers".into(), 2)],
            params: vec![
                ("embedding".into(), Tensor::from_fn(vec![56, 64], |i| i as f32 * 0.01)),
                ("enc_s.l0.w_q".into(), Tensor::from_fn(vec![64, 64], |i| (i as f32).sin())),
            ],
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.umtp");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn identical_state_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.umtp");
        let b = dir.path().join("b.umtp");
        sample().save(&a).unwrap();
        sample().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.umtp");
        std::fs::write(&path, b"NOPE then some bytes").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.umtp");
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn missing_param_lookup_names_it() {
        let ck = sample();
        let err = ck.param("dec_t.l9.w_o").unwrap_err();
        assert!(err.to_string().contains("dec_t.l9.w_o"), "{err}");
    }
}
