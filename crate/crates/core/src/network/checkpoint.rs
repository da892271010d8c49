//! Versioned binary checkpoint container.
//!
//! Layout: magic "CHKP", u32 version, u32 tensor count, a tensor table
//! (name, dims, dtype, offset, byte length), u64 data length, the packed
//! little-endian f32 tensor data, then trailing JSON metadata to EOF.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::network::NetworkParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CHKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Trailing metadata: enough to reproduce the run and to verify that the
/// gain/bias heads are index-aligned with the candidate sets used in
/// training.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub n_candidates: usize,
    /// camera_id -> candidate-set content hash.
    pub candidate_hashes: BTreeMap<String, String>,
    pub frozen_conv1: bool,
}

impl CheckpointMeta {
    /// Verifies that a candidate set matches the hash recorded at
    /// training time for its camera.
    pub fn verify_candidates(&self, cands: &CandidateSet) -> Result<()> {
        let actual = cands.content_hash();
        match self.candidate_hashes.get(&cands.camera_id) {
            Some(expected) if *expected == actual => Ok(()),
            Some(expected) => Err(Error::HashMismatch {
                expected: expected.clone(),
                actual,
            }),
            None => Err(Error::HashMismatch {
                expected: format!("<no entry for camera {}>", cands.camera_id),
                actual,
            }),
        }
    }
}

struct TableEntry {
    name: String,
    dims: Vec<u32>,
    offset: u64,
    byte_len: u64,
}

fn push_tensor(
    table: &mut Vec<TableEntry>,
    data: &mut Vec<u8>,
    name: &str,
    dims: &[usize],
    values: &[f32],
) {
    let offset = data.len() as u64;
    for v in values {
        data.extend_from_slice(&v.to_le_bytes());
    }
    table.push(TableEntry {
        name: name.to_string(),
        dims: dims.iter().map(|&d| d as u32).collect(),
        offset,
        byte_len: (values.len() * 4) as u64,
    });
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(
    path: &Path,
    params: &NetworkParams<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut table = Vec::new();
    let mut data = Vec::new();

    let tensors: Vec<(&str, Vec<usize>, Vec<f32>)> = vec![
        ("conv1.weight", vec![64, 3, 3, 3], params.conv1_w.iter().cloned().collect()),
        ("conv1.bias", vec![64], params.conv1_b.to_vec()),
        ("conv2.weight", vec![64, 64], params.conv2_w.iter().cloned().collect()),
        ("conv2.bias", vec![64], params.conv2_b.to_vec()),
        ("conv3.weight", vec![128, 64], params.conv3_w.iter().cloned().collect()),
        ("conv3.bias", vec![128], params.conv3_b.to_vec()),
        ("fc1.weight", vec![64, 128], params.fc1_w.iter().cloned().collect()),
        ("fc1.bias", vec![64], params.fc1_b.to_vec()),
        ("fc2.weight", vec![32, 64], params.fc2_w.iter().cloned().collect()),
        ("fc2.bias", vec![32], params.fc2_b.to_vec()),
        ("fc3.weight", vec![1, 32], params.fc3_w.iter().cloned().collect()),
        ("fc3.bias", vec![1], params.fc3_b.to_vec()),
        ("head.gain", vec![params.gains.len()], params.gains.to_vec()),
        ("head.bias", vec![params.biases.len()], params.biases.to_vec()),
    ];
    for (name, dims, values) in &tensors {
        push_tensor(&mut table, &mut data, name, dims, values);
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for e in &table {
        buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(e.dims.len() as u8);
        for d in &e.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.push(DTYPE_F32);
        buf.extend_from_slice(&e.offset.to_le_bytes());
        buf.extend_from_slice(&e.byte_len.to_le_bytes());
    }
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(&data);
    buf.extend_from_slice(serde_json::to_string(meta)?.as_bytes());

    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct RawCheckpoint {
    tensors: BTreeMap<String, (Vec<u32>, Vec<f32>)>,
    meta_json: String,
}

fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::IncompatibleCheckpoint(format!("{}: {msg}", path.display()));
    if buf.len() < 12 || &buf[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing CHKP magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let mut pos = 12usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        if pos + 2 > buf.len() {
            return Err(bad("truncated table"));
        }
        let name_len = u16::from_le_bytes(buf[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        let name = String::from_utf8(buf[pos..pos + name_len].to_vec())
            .map_err(|_| bad("non-utf8 tensor name"))?;
        pos += name_len;
        let ndim = buf[pos] as usize;
        pos += 1;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        let dtype = buf[pos];
        pos += 1;
        if dtype != DTYPE_F32 {
            return Err(bad(&format!("unsupported dtype {dtype}")));
        }
        let offset = u64::from_le_bytes(buf[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let byte_len = u64::from_le_bytes(buf[pos..pos + 8].try_into().unwrap());
        pos += 8;
        entries.push(TableEntry { name, dims, offset, byte_len });
    }
    let data_len = u64::from_le_bytes(
        buf.get(pos..pos + 8).ok_or_else(|| bad("truncated data length"))?.try_into().unwrap(),
    ) as usize;
    pos += 8;
    let data = buf.get(pos..pos + data_len).ok_or_else(|| bad("truncated tensor data"))?;
    let meta_json = String::from_utf8(buf[pos + data_len..].to_vec())
        .map_err(|_| bad("non-utf8 metadata"))?;

    let mut tensors = BTreeMap::new();
    for e in entries {
        let start = e.offset as usize;
        let end = start + e.byte_len as usize;
        let slice = data.get(start..end).ok_or_else(|| bad("tensor out of bounds"))?;
        let mut values = Vec::with_capacity(slice.len() / 4);
        for chunk in slice.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        tensors.insert(e.name, (e.dims, values));
    }
    Ok(RawCheckpoint { tensors, meta_json })
}

fn take(
    raw: &mut RawCheckpoint,
    name: &str,
    dims: &[u32],
    path: &Path,
) -> Result<Vec<f32>> {
    let (got_dims, values) = raw.tensors.remove(name).ok_or_else(|| {
        Error::IncompatibleCheckpoint(format!("{}: missing tensor {name}", path.display()))
    })?;
    if got_dims != dims {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: tensor {name} has shape {got_dims:?}, expected {dims:?}",
            path.display()
        )));
    }
    Ok(values)
}

/// Loads a full checkpoint back into f32 parameters plus metadata.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams<f32>, CheckpointMeta)> {
    let mut raw = read_raw(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&raw.meta_json)?;
    let n = meta.n_candidates as u32;

    let conv1_w = take(&mut raw, "conv1.weight", &[64, 3, 3, 3], path)?;
    let conv1_b = take(&mut raw, "conv1.bias", &[64], path)?;
    let conv2_w = take(&mut raw, "conv2.weight", &[64, 64], path)?;
    let conv2_b = take(&mut raw, "conv2.bias", &[64], path)?;
    let conv3_w = take(&mut raw, "conv3.weight", &[128, 64], path)?;
    let conv3_b = take(&mut raw, "conv3.bias", &[128], path)?;
    let fc1_w = take(&mut raw, "fc1.weight", &[64, 128], path)?;
    let fc1_b = take(&mut raw, "fc1.bias", &[64], path)?;
    let fc2_w = take(&mut raw, "fc2.weight", &[32, 64], path)?;
    let fc2_b = take(&mut raw, "fc2.bias", &[32], path)?;
    let fc3_w = take(&mut raw, "fc3.weight", &[1, 32], path)?;
    let fc3_b = take(&mut raw, "fc3.bias", &[1], path)?;
    let gains = take(&mut raw, "head.gain", &[n], path)?;
    let biases = take(&mut raw, "head.bias", &[n], path)?;

    Ok((
        NetworkParams {
            conv1_w: Array4::from_shape_vec((64, 3, 3, 3), conv1_w).expect("shape"),
            conv1_b: Array1::from_vec(conv1_b),
            conv1_frozen: meta.frozen_conv1,
            conv2_w: Array2::from_shape_vec((64, 64), conv2_w).expect("shape"),
            conv2_b: Array1::from_vec(conv2_b),
            conv3_w: Array2::from_shape_vec((128, 64), conv3_w).expect("shape"),
            conv3_b: Array1::from_vec(conv3_b),
            fc1_w: Array2::from_shape_vec((64, 128), fc1_w).expect("shape"),
            fc1_b: Array1::from_vec(fc1_b),
            fc2_w: Array2::from_shape_vec((32, 64), fc2_w).expect("shape"),
            fc2_b: Array1::from_vec(fc2_b),
            fc3_w: Array2::from_shape_vec((1, 32), fc3_w).expect("shape"),
            fc3_b: Array1::from_vec(fc3_b),
            gains: Array1::from_vec(gains),
            biases: Array1::from_vec(biases),
            rng_seed: meta.seed,
        },
        meta,
    ))
}

/// Reads a conv1-only weight container (same CHKP layout; only the two
/// conv1 tensors are consulted). Shape mismatches surface as
/// `BadWeightFile`.
pub fn load_conv1_file(path: &Path) -> Result<(Array4<f32>, Array1<f32>)> {
    let mut raw = read_raw(path).map_err(|e| Error::BadWeightFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let w = take(&mut raw, "conv1.weight", &[64, 3, 3, 3], path).map_err(|e| {
        Error::BadWeightFile { path: path.to_path_buf(), msg: e.to_string() }
    })?;
    let b = take(&mut raw, "conv1.bias", &[64], path).map_err(|e| Error::BadWeightFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((
        Array4::from_shape_vec((64, 3, 3, 3), w).expect("shape"),
        Array1::from_vec(b),
    ))
}
