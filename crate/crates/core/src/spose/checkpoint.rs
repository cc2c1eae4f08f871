//! Binary checkpoint format and CSV export.
//!
//! Layout: magic `SPOSECK1`, little-endian `u32` header length, JSON header,
//! `N*D` little-endian `f64` values in row-major order, then the SHA-256 of
//! every preceding byte.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedding, EmbeddingMeta};
use crate::corpus::{read_id_table, write_id_table};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPOSECK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub lr: f64,
    pub seed: u64,
    pub epoch: usize,
    pub objective: String,
}

pub fn write_checkpoint<W: Write>(mut w: W, e: &Embedding) -> Result<()> {
    let header = CheckpointHeader {
        n: e.n_stimuli(),
        d: e.dim(),
        lambda: e.meta.lambda,
        lr: e.meta.lr,
        seed: e.meta.seed,
        epoch: e.meta.epoch,
        objective: e.meta.objective.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + header.len() + 8 * e.values.len() + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in e.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Embedding> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 12 + 32 || &buf[..8] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("content hash mismatch".into()));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        body.get(12..12 + hlen).ok_or_else(|| Error::Integrity("truncated header".into()))?,
    )?;
    let payload = &body[12 + hlen..];
    if payload.len() != 8 * header.n * header.d {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes, header declares {}x{}",
            payload.len(),
            header.n,
            header.d
        )));
    }
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((header.n, header.d), vals)
        .map_err(|e| Error::Integrity(e.to_string()))?;
    let meta = EmbeddingMeta {
        lambda: header.lambda,
        lr: header.lr,
        seed: header.seed,
        epoch: header.epoch,
        objective: header.objective,
    };
    Embedding::with_meta(values, meta)
}

impl Embedding {
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?), self)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        read_checkpoint(std::fs::File::open(path)?)
    }

    /// CSV `stimulus_id,c1..cD` with dense stimulus ids.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let labels: Vec<String> = (1..=self.dim()).map(|i| format!("c{i}")).collect();
        let ids: Vec<u64> = (0..self.n_stimuli() as u64).collect();
        write_id_table(w, &labels, &ids, &self.values)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let t = read_id_table(r)?;
        if t.source_ids.iter().enumerate().any(|(i, &s)| s != i as u64) {
            return Err(Error::Schema("embedding CSV stimulus ids must be 0..N".into()));
        }
        Embedding::new(t.values)
    }

    /// Loads either format, by extension (`.csv` or checkpoint otherwise).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        if p.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(std::fs::File::open(p)?)
        } else {
            Self::load_checkpoint(p)
        }
    }
}
