//! Single-file checkpoints.
//!
//! Layout: `b"PADC"`, version `u8`, header length as `u64` little-endian,
//! a UTF-8 JSON header, then the tensor blobs back to back. The header
//! lists every blob with its byte offset into the blob section, its length
//! and a SHA-256 digest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::blob::{decode_blob, write_blob};
use crate::error::{Error, Result};
use crate::models::{Architecture, NetworkSpec, ParamStore};
use crate::tensor::{DType, Scalar, Tensor};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PADC";
pub const CHECKPOINT_VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 8;

/// Training position and provenance stored with the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// What produced the checkpoint, e.g. `"generator"`.
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Index of the next random stream to derive. Every stream is a pure
    /// function of `(seed, tag, index)`, so this is the whole RNG state.
    pub rng_cursor: u64,
    /// Free-form payload (loss history, configs).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar = f32> {
    pub network: NetworkSpec<T>,
    pub adam: Option<AdamState<T>>,
    pub meta: CheckpointMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    name: String,
    group: Group,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: DType,
    architecture: Architecture,
    meta: CheckpointMeta,
    adam_step: Option<u64>,
    blobs: Vec<BlobRef>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(network: NetworkSpec<T>, adam: Option<AdamState<T>>, meta: CheckpointMeta) -> Self {
        Checkpoint {
            network,
            adam,
            meta,
        }
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        let mut blobs = Vec::new();
        let mut push = |name: &str, group: Group, t: &Tensor<T>| {
            let start = body.len();
            write_blob(t, &mut body);
            blobs.push(BlobRef {
                name: name.to_string(),
                group,
                offset: start as u64,
                len: (body.len() - start) as u64,
                sha256: sha256_hex(&body[start..]),
            });
        };
        let store = &self.network.store;
        for (name, t) in &store.params {
            push(name, Group::Param, t);
        }
        for (name, t) in &store.buffers {
            push(name, Group::Buffer, t);
        }
        if let Some(adam) = &self.adam {
            for (name, t) in &adam.m {
                push(name, Group::AdamM, t);
            }
            for (name, t) in &adam.v {
                push(name, Group::AdamV, t);
            }
        }
        let header = Header {
            dtype: T::DTYPE,
            architecture: self.network.arch.clone(),
            meta: self.meta.clone(),
            adam_step: self.adam.as_ref().map(|a| a.step),
            blobs,
        };
        let json =
            serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Parses a full checkpoint. Nothing is returned unless every blob
    /// verifies.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Corruption("not a checkpoint (bad magic)".into()));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: bytes[4],
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::Corruption("checkpoint truncated in preamble".into()));
        }
        let hlen = u64::from_le_bytes(bytes[5..PREAMBLE].try_into().expect("8 bytes"));
        let body_start = usize::try_from(hlen)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corruption("checkpoint truncated in header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..body_start])
            .map_err(|e| Error::Corruption(format!("bad checkpoint header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {:?} tensors, requested {:?}",
                header.dtype,
                T::DTYPE
            )));
        }
        let body = &bytes[body_start..];
        let mut expected_end = 0u64;
        let mut store = ParamStore::default();
        let mut m = std::collections::BTreeMap::new();
        let mut v = std::collections::BTreeMap::new();
        for b in &header.blobs {
            if b.offset != expected_end {
                return Err(Error::Corruption(format!(
                    "blob {} is not contiguous",
                    b.name
                )));
            }
            expected_end = b.offset.saturating_add(b.len);
            let range = usize::try_from(b.offset)
                .ok()
                .zip(usize::try_from(expected_end).ok())
                .filter(|&(_, end)| end <= body.len())
                .ok_or_else(|| {
                    Error::Corruption(format!("checkpoint truncated in blob {}", b.name))
                })?;
            let raw = &body[range.0..range.1];
            if sha256_hex(raw) != b.sha256 {
                return Err(Error::Corruption(format!(
                    "digest mismatch for blob {}",
                    b.name
                )));
            }
            let (t, used) = decode_blob::<T>(raw)?;
            if used != raw.len() {
                return Err(Error::Corruption(format!(
                    "blob {} has trailing bytes",
                    b.name
                )));
            }
            let slot = match b.group {
                Group::Param => {
                    store
                        .params
                        .insert(b.name.clone(), t.with_requires_grad(true));
                    continue;
                }
                Group::Buffer => &mut store.buffers,
                Group::AdamM => &mut m,
                Group::AdamV => &mut v,
            };
            slot.insert(b.name.clone(), t);
        }
        if expected_end as usize != body.len() {
            return Err(Error::Corruption("trailing bytes after last blob".into()));
        }
        let network = NetworkSpec::from_parts(header.architecture, store).map_err(|e| {
            Error::Corruption(format!("checkpoint does not match its architecture: {e}"))
        })?;
        let adam = header.adam_step.map(|step| AdamState { step, m, v });
        if let Some(a) = &adam {
            let names: Vec<_> = network.store.params.keys().collect();
            if !a.m.keys().eq(names.iter().copied()) || !a.v.keys().eq(names.iter().copied()) {
                return Err(Error::Corruption(
                    "optimizer state does not cover the parameters".into(),
                ));
            }
        }
        Ok(Checkpoint {
            network,
            adam,
            meta: header.meta,
        })
    }
}

/// Writes via a temporary sibling and a rename.
pub fn save_checkpoint<T: Scalar>(c: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = c.to_bytes()?;
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
