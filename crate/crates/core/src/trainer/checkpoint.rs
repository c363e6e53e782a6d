//! Checkpoint file format.
//!
//! Version-tagged binary layout, little-endian throughout: a 4-byte magic,
//! a format version, JSON blobs for the config and graph fingerprint, then
//! raw little-endian `f64` payloads for every parameter tensor, optimizer
//! moment and attention cache. Save -> load -> save is byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::autodiff::{AdamState, ParamStore};
use crate::error::{CoreError, Result};
use crate::layers::AttnCache;
use crate::trainer::{Checkpoint, GraphFingerprint, TrainConfig};

const MAGIC: &[u8; 4] = b"HYPD";
const VERSION: u32 = 1;

fn bad(msg: impl std::fmt::Display) -> CoreError {
    CoreError::Checkpoint(msg.to_string())
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.w.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.u64(v.len() as u64)?;
        self.w.write_all(v)?;
        Ok(())
    }
    fn matrix(&mut self, m: &Array2<f64>) -> Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        for &v in m.iter() {
            self.f64(v)?;
        }
        Ok(())
    }
    fn store(&mut self, s: &ParamStore) -> Result<()> {
        self.u64(s.step)?;
        self.u64(s.len() as u64)?;
        for e in s.entries() {
            self.bytes(e.name.as_bytes())?;
            self.matrix(&e.value)?;
            self.matrix(&e.state.m)?;
            self.matrix(&e.state.v)?;
        }
        Ok(())
    }
    fn cache(&mut self, c: &AttnCache) -> Result<()> {
        self.u64(c.len() as u64)?;
        for per_ty in c {
            self.u64(per_ty.len() as u64)?;
            for slot in per_ty {
                match slot {
                    None => self.u8(0)?,
                    Some(m) => {
                        self.u8(1)?;
                        self.matrix(m)?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(f64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let len = self.u64()? as usize;
        if len > 1 << 32 {
            return Err(bad("implausible blob length"));
        }
        let mut v = vec![0u8; len];
        self.r.read_exact(&mut v).map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(v)
    }
    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows.saturating_mul(cols) > 1 << 30 {
            return Err(bad("implausible matrix size"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e))
    }
    fn store(&mut self) -> Result<ParamStore> {
        let step = self.u64()?;
        let count = self.u64()? as usize;
        let mut s = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(self.bytes()?).map_err(|e| bad(e))?;
            let value = self.matrix()?;
            let m = self.matrix()?;
            let v = self.matrix()?;
            s.register(name.clone(), value);
            let idx = s.index_of(&name).unwrap();
            s.entries_mut()[idx].state = AdamState { m, v };
        }
        s.step = step;
        Ok(s)
    }
    fn cache(&mut self) -> Result<AttnCache> {
        let layers = self.u64()? as usize;
        let mut c = Vec::with_capacity(layers);
        for _ in 0..layers {
            let types = self.u64()? as usize;
            let mut per_ty = Vec::with_capacity(types);
            for _ in 0..types {
                per_ty.push(match self.u8()? {
                    0 => None,
                    1 => Some(self.matrix()?),
                    other => return Err(bad(format!("bad cache flag {other}"))),
                });
            }
            c.push(per_ty);
        }
        Ok(c)
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path)?;
    let mut w = Writer {
        w: std::io::BufWriter::new(file),
    };
    w.w.write_all(MAGIC)?;
    w.u32(VERSION)?;
    let cfg_json =
        serde_json::to_vec(&ckpt.cfg).map_err(|e| bad(format!("config encode: {e}")))?;
    w.bytes(&cfg_json)?;
    let fp_json = serde_json::to_vec(&ckpt.graph_fingerprint)
        .map_err(|e| bad(format!("fingerprint encode: {e}")))?;
    w.bytes(&fp_json)?;
    w.u64(ckpt.epoch as u64)?;
    w.u64(ckpt.best_epoch as u64)?;
    w.f64(ckpt.best_metric)?;
    w.store(&ckpt.store)?;
    w.store(&ckpt.q_store)?;
    w.store(&ckpt.best_store)?;
    w.store(&ckpt.best_q_store)?;
    for c in &ckpt.caches {
        w.cache(c)?;
    }
    for c in &ckpt.best_caches {
        w.cache(c)?;
    }
    w.w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path)
        .map_err(|e| bad(format!("cannot open {}: {e}", path.display())))?;
    let mut r = Reader {
        r: std::io::BufReader::new(file),
    };
    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let cfg: TrainConfig = serde_json::from_slice(&r.bytes()?)
        .map_err(|e| bad(format!("config decode: {e}")))?;
    let graph_fingerprint: GraphFingerprint = serde_json::from_slice(&r.bytes()?)
        .map_err(|e| bad(format!("fingerprint decode: {e}")))?;
    let epoch = r.u64()? as usize;
    let best_epoch = r.u64()? as usize;
    let best_metric = r.f64()?;
    let store = r.store()?;
    let q_store = r.store()?;
    let best_store = r.store()?;
    let best_q_store = r.store()?;
    let caches = [r.cache()?, r.cache()?];
    let best_caches = [r.cache()?, r.cache()?];
    Ok(Checkpoint {
        cfg,
        graph_fingerprint,
        epoch,
        best_epoch,
        best_metric,
        store,
        q_store,
        caches,
        best_store,
        best_q_store,
        best_caches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};
    use crate::trainer::{train, ModelDims, Task, TrainConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("hypdis_ckpt_{name}_{}", std::process::id()))
    }

    fn quick_checkpoint() -> Checkpoint {
        let g = generate(&SyntheticConfig {
            nodes_a: 20,
            nodes_b: 20,
            nodes_c: 8,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            task: Task::NodeClassification,
            dims: ModelDims {
                d0: 4,
                hidden: vec![4],
            },
            head_hidden: 4,
            club_hidden: 8,
            disc_hidden: 4,
            max_epochs: 2,
            seed: 9,
            ..Default::default()
        };
        train(&g, &cfg).unwrap().checkpoint
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ckpt = quick_checkpoint();
        let p1 = tmp("rt1");
        let p2 = tmp("rt2");
        write_checkpoint(&ckpt, &p1).unwrap();
        let loaded = read_checkpoint(&p1).unwrap();
        assert_eq!(ckpt, loaded);
        write_checkpoint(&loaded, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b, "save -> load -> save must be byte-identical");
    }

    #[test]
    fn corrupt_header_is_a_clean_error() {
        let p = tmp("bad");
        std::fs::write(&p, b"NOPE....").unwrap();
        let err = read_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_is_a_clean_error() {
        let ckpt = quick_checkpoint();
        let p = tmp("trunc");
        write_checkpoint(&ckpt, &p).unwrap();
        let data = std::fs::read(&p).unwrap();
        std::fs::write(&p, &data[..data.len() / 2]).unwrap();
        let err = read_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn version_mismatch_rejected() {
        let ckpt = quick_checkpoint();
        let p = tmp("ver");
        write_checkpoint(&ckpt, &p).unwrap();
        let mut data = std::fs::read(&p).unwrap();
        data[4] = 99; // bump the version field
        std::fs::write(&p, &data).unwrap();
        let err = read_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
