//! Versioned binary checkpoints: a JSON header (kind, seed, schedule, model
//! geometry) followed by named float64 arrays, all little-endian. Round-trips
//! are bit-exact — checkpoints are the determinism boundary between runs.

use crate::error::{CoreError, Result};
use crate::model::alpha::AlphaSchedule;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DMFCKPT\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model kind tag, e.g. "exact-kernel", "sequence-kernel", "posterior".
    pub kind: String,
    pub seed: u64,
    /// The α schedule the model was trained with, when it has one.
    pub schedule: Option<AlphaSchedule>,
    /// Kind-specific geometry (state count, vocab, sequence length, …).
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    tensors: &[(&str, &Tensor)],
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header_bytes = serde_json::to_vec(header)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Tensor)>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "not a checkpoint file (magic {:02x?})",
            &magic
        )));
    }
    let version = read_u32(&mut r, "format version")?;
    if version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = read_u32(&mut r, "header length")? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact(&mut r, &mut header_bytes, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::Checkpoint(format!("malformed header JSON: {e}")))?;

    let n_tensors = read_u32(&mut r, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for i in 0..n_tensors {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CoreError::Checkpoint(format!("tensor {i} name is not UTF-8")))?;
        let ndim = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, "dimension")?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        read_exact(&mut r, &mut bytes, "tensor data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok((header, tensors))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| CoreError::Checkpoint(format!("truncated checkpoint reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            kind: "exact-kernel".into(),
            seed: 42,
            schedule: Some(AlphaSchedule::Exponential { c: 4.0 }),
            meta: serde_json::json!({"n_states": 2}),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        // values chosen to catch any text formatting on the way: negative
        // zero, a subnormal, and an irrational
        let w = Tensor::from_vec(&[2, 2], vec![-0.0, 1e-310, std::f64::consts::PI, -3.5]);
        let b = Tensor::from_vec(&[2], vec![0.25, -0.125]);
        save_checkpoint(&path, &header(), &[("w", &w), ("b", &b)]).unwrap();
        let (h, ts) = load_checkpoint(&path).unwrap();
        assert_eq!(h, header());
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].0, "w");
        assert_eq!(ts[1].0, "b");
        for (orig, (_, loaded)) in [&w, &b].iter().zip(&ts) {
            assert_eq!(orig.shape, loaded.shape);
            for (a, b) in orig.data.iter().zip(&loaded.data) {
                assert_eq!(a.to_bits(), b.to_bits(), "FAIL: round-trip must be bit-exact");
            }
        }
    }

    #[test]
    fn rejects_foreign_and_damaged_files() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("bogus.ckpt");
        std::fs::write(&bogus, b"not a checkpoint at all").unwrap();
        let err = load_checkpoint(&bogus).unwrap_err().to_string();
        assert!(err.contains("magic"), "FAIL: want a magic-number complaint, got: {err}");

        let path = dir.path().join("model.ckpt");
        let w = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        save_checkpoint(&path, &header(), &[("w", &w)]).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "FAIL: want truncation report, got: {err}");
    }

    #[test]
    fn rejects_future_format_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &header(), &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 99"), "FAIL: want version complaint, got: {err}");
    }
}
