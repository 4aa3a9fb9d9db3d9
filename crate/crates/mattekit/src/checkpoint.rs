//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic           8 bytes  "MATTEKPT"
//! version         u32      currently 1
//! fingerprint     8 bytes  first 8 bytes of sha256 over the model-config JSON
//! phase           u8       training phase the file was written in (0 = untrained)
//! step            u64      global step counter
//! tensor count    u32
//! per tensor:
//!   name length   u16      then that many UTF-8 bytes
//!   shape         4 x u32
//!   adam_t        u64      optimizer step counter (0 when absent)
//!   offset        u64      byte offset into the payload
//!   len           u64      element count
//! payload         concatenated f32 little-endian values
//! ```
//!
//! Parameter tensors use their model names (`s1.enc00.w`, ...); Adam
//! moments ride along as `<name>#m` / `<name>#v`. Loading verifies magic,
//! version, fingerprint, and per-tensor shapes and payload bounds, and
//! fails naming the offending tensor; a checkpoint never loads into a
//! model config it was not written for.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{zeroed_model, ModelParams, Stage1Config, Stage2Config};
use crate::ops::AdamState;

pub const MAGIC: &[u8; 8] = b"MATTEKPT";
pub const VERSION: u32 = 1;

/// First 8 bytes of sha256 over the JSON encoding of both model configs.
/// Two configs collide only if they serialize identically, so a checkpoint
/// can never silently load into a differently-shaped model.
pub fn config_fingerprint(cfg1: &Stage1Config, cfg2: &Stage2Config) -> [u8; 8] {
    #[derive(serde::Serialize)]
    struct Both<'a> {
        stage1: &'a Stage1Config,
        stage2: &'a Stage2Config,
    }
    let json = serde_json::to_vec(&Both { stage1: cfg1, stage2: cfg2 }).expect("config serialize");
    let digest = Sha256::digest(&json);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

#[derive(Clone, Debug)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [u32; 4],
    pub adam_t: u64,
    pub offset: u64,
    pub len: u64,
}

/// Everything in a checkpoint except the payload values.
#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub version: u32,
    pub fingerprint: [u8; 8],
    pub phase: u8,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
}

/// A checkpoint read back into memory.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub params: ModelParams,
    /// Adam moments keyed by parameter tensor name; empty when the
    /// checkpoint was saved without optimizer state.
    pub optimizer_state: BTreeMap<String, AdamState>,
    pub phase: u8,
    pub step: u64,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadCheckpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes parameters (and optionally Adam state) into checkpoint bytes.
pub fn checkpoint_bytes(
    params: &ModelParams,
    optimizer_state: Option<&BTreeMap<String, AdamState>>,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    phase: u8,
    step: u64,
) -> Vec<u8> {
    // (name, shape, adam_t, values)
    let mut entries: Vec<(String, [usize; 4], u64, Vec<f32>)> = Vec::new();
    for (name, tensor) in params.named_tensors() {
        let (n, c, h, w) = tensor.shape();
        let state = optimizer_state.and_then(|s| s.get(&name));
        let t = state.map_or(0, |s| s.t);
        entries.push((name.clone(), [n, c, h, w], t, tensor.data().to_vec()));
        if let Some(s) = state {
            entries.push((format!("{}#m", name), [n, c, h, w], s.t, s.m.clone()));
            entries.push((format!("{}#v", name), [n, c, h, w], s.t, s.v.clone()));
        }
    }

    let mut payload = Vec::new();
    let mut directory = Vec::new();
    for (name, shape, adam_t, values) in &entries {
        let offset = payload.len() as u64;
        push_f32s(&mut payload, values);
        directory.push((name, shape, *adam_t, offset, values.len() as u64));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config_fingerprint(cfg1, cfg2));
    buf.push(phase);
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(directory.len() as u32).to_le_bytes());
    for (name, shape, adam_t, offset, len) in directory {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        for &dim in shape.iter() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.extend_from_slice(&adam_t.to_le_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&len.to_le_bytes());
    }
    buf.extend_from_slice(&payload);
    buf
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    optimizer_state: Option<&BTreeMap<String, AdamState>>,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    phase: u8,
    step: u64,
) -> Result<()> {
    let bytes = checkpoint_bytes(params, optimizer_state, cfg1, cfg2, phase, step);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad(self.path, format!("truncated while reading {}", what)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses header and directory; the returned meta records where the
/// payload starts via `payload_bytes` (bytes remaining after the
/// directory).
fn parse_meta<'a>(path: &'a Path, bytes: &'a [u8]) -> Result<(CheckpointMeta, usize)> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(bad(path, "bad magic bytes (not a checkpoint file)"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {} (expected {})", version, VERSION)));
    }
    let mut fingerprint = [0u8; 8];
    fingerprint.copy_from_slice(cur.take(8, "fingerprint")?);
    let phase = cur.take(1, "phase")?[0];
    let step = cur.u64("step")?;
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("directory entry {}", i);
        let name_len = cur.u16(&what)? as usize;
        let name_bytes = cur.take(name_len, &what)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| bad(path, format!("non-UTF-8 tensor name in {}", what)))?
            .to_string();
        let mut shape = [0u32; 4];
        for d in &mut shape {
            *d = cur.u32(&name)?;
        }
        let adam_t = cur.u64(&name)?;
        let offset = cur.u64(&name)?;
        let len = cur.u64(&name)?;
        tensors.push(TensorEntry { name, shape, adam_t, offset, len });
    }
    let payload_start = cur.pos;
    let meta = CheckpointMeta {
        version,
        fingerprint,
        phase,
        step,
        tensors,
        payload_bytes: (bytes.len() - payload_start) as u64,
    };
    Ok((meta, payload_start))
}

/// Reads header and tensor directory without requiring the model config.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_meta(path, &bytes)?.0)
}

fn read_entry_values(path: &Path, payload: &[u8], entry: &TensorEntry) -> Result<Vec<f32>> {
    let start = entry.offset as usize;
    let nbytes = entry.len as usize * 4;
    if start + nbytes > payload.len() {
        return Err(bad(path, format!("truncated payload for tensor {}", entry.name)));
    }
    Ok(payload[start..start + nbytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_checkpoint(
    path: &Path,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, payload_start) = parse_meta(path, &bytes)?;
    let expected = config_fingerprint(cfg1, cfg2);
    if meta.fingerprint != expected {
        return Err(bad(
            path,
            format!(
                "config fingerprint mismatch: file {:02x?}, expected {:02x?} — \
                 checkpoint was written for a different model configuration",
                meta.fingerprint, expected
            ),
        ));
    }
    let payload = &bytes[payload_start..];
    let mut by_name: BTreeMap<String, TensorEntry> =
        meta.tensors.iter().map(|e| (e.name.clone(), e.clone())).collect();
    if by_name.len() != meta.tensors.len() {
        return Err(bad(path, "duplicate tensor names in directory"));
    }

    let mut params = zeroed_model(cfg1, cfg2)?;
    let mut optimizer_state = BTreeMap::new();
    for (name, tensor) in params.named_tensors_mut() {
        let entry = by_name
            .remove(&name)
            .ok_or_else(|| bad(path, format!("missing tensor {}", name)))?;
        let (n, c, h, w) = tensor.shape();
        let expected_shape = [n as u32, c as u32, h as u32, w as u32];
        if entry.shape != expected_shape {
            return Err(bad(
                path,
                format!(
                    "tensor {} has shape {:?}, model wants {:?}",
                    name, entry.shape, expected_shape
                ),
            ));
        }
        let values = read_entry_values(path, payload, &entry)?;
        if values.len() != tensor.len() {
            return Err(bad(
                path,
                format!("tensor {} holds {} values, model wants {}", name, values.len(), tensor.len()),
            ));
        }
        tensor.data_mut().copy_from_slice(&values);

        let m_entry = by_name.remove(&format!("{}#m", name));
        let v_entry = by_name.remove(&format!("{}#v", name));
        match (m_entry, v_entry) {
            (Some(me), Some(ve)) => {
                let m = read_entry_values(path, payload, &me)?;
                let v = read_entry_values(path, payload, &ve)?;
                if m.len() != tensor.len() || v.len() != tensor.len() {
                    return Err(bad(path, format!("optimizer state size mismatch for {}", name)));
                }
                optimizer_state.insert(name.clone(), AdamState { m, v, t: entry.adam_t });
            }
            (None, None) => {}
            _ => {
                return Err(bad(
                    path,
                    format!("tensor {} has only one of its two Adam moment tensors", name),
                ))
            }
        }
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(bad(path, format!("unexpected tensor {} in checkpoint", name)));
    }
    Ok(LoadedCheckpoint { params, optimizer_state, phase: meta.phase, step: meta.step })
}
