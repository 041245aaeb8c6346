//! Versioned single-file model checkpoints.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "SBMILCK\0"
//! 8       4     format version, u32 LE
//! 12      8     header length H, u64 LE
//! 20      H     UTF-8 JSON header (CheckpointHeader)
//! 20+H    ...   tensors as f32 LE, row-major, in header order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Attention, Head, Matrix, MilError, MilParams, ModelKind};
use crate::dataset_store::TaskConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SBMILCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelKind,
    pub dim: usize,
    pub hidden: usize,
    pub embedder_id: String,
    pub tasks: Vec<TaskConfig>,
    pub tensors: Vec<TensorInfo>,
    /// Free-form training metadata (seed, best epoch, ...).
    #[serde(default)]
    pub info: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: MilParams<f32>,
}

pub fn write_checkpoint(
    path: &Path,
    params: &MilParams<f32>,
    embedder_id: &str,
    info: BTreeMap<String, serde_json::Value>,
) -> Result<(), MilError> {
    let tensors = params.tensors();
    let header = CheckpointHeader {
        model: params.kind,
        dim: params.dim,
        hidden: params.hidden,
        embedder_id: embedder_id.to_owned(),
        tasks: params.tasks.clone(),
        tensors: tensors.iter().map(|t| TensorInfo { name: t.0.clone(), shape: t.1 }).collect(),
        info,
    };
    let json = serde_json::to_vec(&header).map_err(|e| MilError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 4 * params.num_parameters());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &tensors {
        for v in t.2 {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, MilError> {
    let bytes = fs::read(path)?;
    let bad = |m: String| MilError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let h = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + h).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    let mut data = &bytes[20 + h..];

    let mut take = |info: &TensorInfo| -> Result<Vec<f32>, MilError> {
        let n = info.shape[0] * info.shape[1];
        if data.len() < 4 * n {
            return Err(bad(format!("truncated tensor {}", info.name)));
        }
        let (head, rest) = data.split_at(4 * n);
        data = rest;
        Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let mut used = 0;
    let mut next = |name: &str, shape: [usize; 2]| -> Result<Vec<f32>, MilError> {
        let info = header.tensors.get(used).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        used += 1;
        if info.name != name || info.shape != shape {
            return Err(bad(format!("expected {name} {shape:?}, found {} {:?}", info.name, info.shape)));
        }
        take(info)
    };

    let (d, l) = (header.dim, header.hidden);
    let attention = if header.model == ModelKind::Abmil {
        Some(Attention {
            v: Matrix { rows: l, cols: d, data: next("attention.V", [l, d])? },
            u: Matrix { rows: l, cols: d, data: next("attention.U", [l, d])? },
            w: next("attention.w", [l, 1])?,
        })
    } else {
        None
    };
    let mut heads = Vec::new();
    for (i, t) in header.tasks.iter().enumerate() {
        let c = t.output_width();
        heads.push(Head {
            w: Matrix { rows: c, cols: d, data: next(&format!("heads.{i}.W"), [c, d])? },
            b: next(&format!("heads.{i}.b"), [c, 1])?,
        });
    }
    drop(next);
    if used != header.tensors.len() {
        return Err(bad("unexpected extra tensors".into()));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let params = MilParams { kind: header.model, dim: d, hidden: l, tasks: header.tasks.clone(), attention, heads };
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(Checkpoint { header, params })
}

#[cfg(test)]
mod tests {
    use super::super::build_model;
    use super::*;

    fn tasks() -> Vec<TaskConfig> {
        vec![TaskConfig::classification("c", &["x", "y", "z"]), TaskConfig::regression("r")]
    }

    #[test]
    fn round_trip_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let p: MilParams<f32> = build_model(&tasks(), 6, 5, kind, 3).unwrap();
            let path = dir.path().join(format!("{kind}.ckpt"));
            let info: BTreeMap<_, _> = [("seed".to_string(), serde_json::json!(3))].into_iter().collect();
            write_checkpoint(&path, &p, "native8x8-splitmix64-seed1-d6", info.clone()).unwrap();
            let ck = read_checkpoint(&path).unwrap();
            assert_eq!(ck.params, p);
            assert_eq!(ck.header.embedder_id, "native8x8-splitmix64-seed1-d6");
            assert_eq!(ck.header.info, info);
            let again = dir.path().join("again.ckpt");
            write_checkpoint(&again, &ck.params, &ck.header.embedder_id, ck.header.info.clone()).unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p: MilParams<f32> = build_model(&tasks(), 4, 3, ModelKind::Abmil, 1).unwrap();
        write_checkpoint(&path, &p, "e", BTreeMap::new()).unwrap();
        let good = fs::read(&path).unwrap();

        let mut truncated = good.clone();
        truncated.pop();
        fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(MilError::Checkpoint(_))));

        let mut wrong_version = good.clone();
        wrong_version[8] = 9;
        fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(MilError::Checkpoint(_))));

        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &nan).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(MilError::Checkpoint(_))));

        fs::write(&path, b"hello").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(MilError::Checkpoint(_))));
    }
}
