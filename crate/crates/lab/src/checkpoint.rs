//! Binary checkpoint files.
//!
//! Layout: the magic `ANCLCKPT`, a little-endian `u32` version, a `u64`
//! header length, a JSON header, then raw little-endian `f64` data (every
//! tensor in header order, then all first moments, then all second
//! moments), then a SHA-256 of everything before it.

use std::path::Path;

use anclab_core::nn::{AdamState, Checkpoint, CrnParams, EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::io::require;

const MAGIC: &[u8; 8] = b"ANCLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    epoch: usize,
    best_stage1_epoch: Option<usize>,
    history: Vec<EpochRecord>,
    dataset_fingerprint: String,
    paths_hash: String,
    config_hash: String,
    tensors: Vec<TensorEntry>,
    adam_step: u64,
    adam_moments: Vec<usize>,
}

/// A training checkpoint plus the hashes of what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub checkpoint: Checkpoint,
    pub paths_hash: String,
    pub config_hash: String,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(file: &CheckpointFile) -> Vec<u8> {
    let ck = &file.checkpoint;
    let tensors = ck.params.tensors();
    let header = Header {
        train_config: ck.config.clone(),
        epoch: ck.epoch,
        best_stage1_epoch: ck.best_stage1_epoch,
        history: ck.history.clone(),
        dataset_fingerprint: ck.dataset_fingerprint.clone(),
        paths_hash: file.paths_hash.clone(),
        config_hash: file.config_hash.clone(),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                requires_grad: t.requires_grad,
            })
            .collect(),
        adam_step: ck.adam.step,
        adam_moments: ck.adam.m.iter().map(Vec::len).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        put_f64s(&mut out, &t.data);
    }
    for m in ck.adam.m.iter().chain(&ck.adam.v) {
        put_f64s(&mut out, m);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LabError::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| LabError::format(self.path, "tensor too large"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<CheckpointFile> {
    let bad = |m: &str| LabError::format(path, m);
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not an anclab checkpoint"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut cur = Cursor {
        bytes: body,
        pos: 8,
        path,
    };
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?).map_err(|e| LabError::json(path, e))?;

    let mut data = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        data.push(cur.f64s(t.shape.iter().product())?);
    }
    let m = header
        .adam_moments
        .iter()
        .map(|&n| cur.f64s(n))
        .collect::<Result<Vec<_>>>()?;
    let v = header
        .adam_moments
        .iter()
        .map(|&n| cur.f64s(n))
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != body.len() {
        return Err(bad("trailing bytes after tensor data"));
    }

    let frozen = header
        .tensors
        .iter()
        .position(|t| !t.requires_grad)
        .ok_or_else(|| bad("no frozen secondary-path tensor"))?;
    let mut params = CrnParams::new(header.train_config.crn.clone(), &data[frozen], header.train_config.seed)?;
    {
        let mut tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the network config"));
        }
        for ((t, entry), d) in tensors.iter_mut().zip(&header.tensors).zip(data) {
            if t.name != entry.name || t.shape != entry.shape || t.requires_grad != entry.requires_grad {
                return Err(bad(&format!("tensor {} does not match the network config", entry.name)));
            }
            t.data = d;
        }
    }
    Ok(CheckpointFile {
        checkpoint: Checkpoint {
            config: header.train_config,
            params,
            adam: AdamState {
                step: header.adam_step,
                m,
                v,
            },
            epoch: header.epoch,
            best_stage1_epoch: header.best_stage1_epoch,
            history: header.history,
            dataset_fingerprint: header.dataset_fingerprint,
        },
        paths_hash: header.paths_hash,
        config_hash: header.config_hash,
    })
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written checkpoint under the final name.
pub fn save(path: &Path, file: &CheckpointFile) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(file)).map_err(|e| LabError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<CheckpointFile> {
    require(path, "train")?;
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anclab_core::nn::{CrnConfig, Schedule};
    use anclab_core::scenario::Task;

    fn sample_file() -> CheckpointFile {
        let cfg = TrainConfig::new(CrnConfig::reduced(), Schedule::default(), Task::PureNoise, 5);
        let mut params = CrnParams::new(cfg.crn.clone(), &[0.0, 0.7, -0.2], 5).unwrap();
        let mut adam = AdamState::for_params(&params.trainable_mut());
        adam.step = 17;
        for (i, m) in adam.m.iter_mut().enumerate() {
            m.iter_mut()
                .enumerate()
                .for_each(|(j, v)| *v = (i * 31 + j) as f64 * 1e-3);
        }
        for v in adam.v.iter_mut().flatten() {
            *v = 0.25;
        }
        CheckpointFile {
            checkpoint: Checkpoint {
                config: cfg,
                params,
                adam,
                epoch: 3,
                best_stage1_epoch: Some(2),
                history: vec![EpochRecord {
                    epoch: 1,
                    stage: 1,
                    lr: 5e-4,
                    mean_loss: 0.125,
                    step_losses: vec![0.2, 0.05],
                }],
                dataset_fingerprint: "abc".into(),
            },
            paths_hash: "def".into(),
            config_hash: "0123".into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample_file();
        let back = decode(&encode(&f), Path::new("mem")).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode(&back), encode(&f));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&sample_file());
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(decode(&flipped, Path::new("mem")).is_err());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut wrong_magic = bytes;
        wrong_magic[0] = b'X';
        assert!(decode(&wrong_magic, Path::new("mem")).is_err());
    }
}
