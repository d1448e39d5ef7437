//! Binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "TFCKPT01" | u32 version | u32 header length | header JSON
//! | for each store, for each entry (header order): value, adam_m, adam_v
//! | u32 CRC32 of everything before it
//! ```
//!
//! Gradients are not stored. Element width follows the header's dtype.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderSuite;
use crate::error::{Error, Result};
use crate::nn::{DType, NdArray, ParamEntry, ParamStore, Parameterized, Scalar};

use super::config::{MetricRecord, PretrainConfig};
use super::objective::{ModelSpec, PretrainModel};

const MAGIC: &[u8; 8] = b"TFCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Metric records kept in a checkpoint.
pub const METRIC_TAIL: usize = 100;

/// Trained model with the provenance needed to resume or reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: PretrainConfig,
    pub model: PretrainModel<T>,
    pub step: u64,
    pub dataset_fingerprint: String,
    pub metric_tail: Vec<MetricRecord>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn suite(&self) -> &EncoderSuite<T> {
        &self.model.suite
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    name: String,
    step_count: u64,
    entries: Vec<EntryHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: DType,
    config: PretrainConfig,
    model: ModelSpec,
    step: u64,
    dataset_fingerprint: String,
    metric_tail: Vec<MetricRecord>,
    stores: Vec<StoreHeader>,
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let stores = ckpt
        .model
        .stores()
        .into_iter()
        .map(|(name, s)| StoreHeader {
            name: name.to_string(),
            step_count: s.step_count(),
            entries: s
                .iter()
                .map(|(n, e)| EntryHeader {
                    name: n.clone(),
                    shape: e.value.shape().to_vec(),
                })
                .collect(),
        })
        .collect();
    let header = Header {
        dtype: T::DTYPE,
        config: ckpt.config.clone(),
        model: ckpt.model.spec(),
        step: ckpt.step,
        dataset_fingerprint: ckpt.dataset_fingerprint.clone(),
        metric_tail: ckpt.metric_tail.clone(),
        stores,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Internal(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + 16 + ckpt.model.stores().iter().map(|(_, s)| s.num_scalars()).sum::<usize>() * 3 * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, s) in ckpt.model.stores() {
        for (_, e) in s.iter() {
            for arr in [&e.value, &e.adam_m, &e.adam_v] {
                for &v in arr.data() {
                    out.extend_from_slice(&v.to_le_bytes_vec());
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch (file corrupted or truncated)".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("bad checkpoint header: {e}")))?;
    Ok((header, r.pos))
}

/// Element type of an encoded checkpoint.
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<DType> {
    Ok(parse_header(bytes)?.0.dtype)
}

fn decode_as<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    let (header, start) = parse_header(bytes)?;
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {} values, expected {}", header.dtype, S::DTYPE)));
    }
    let mut r = Reader {
        bytes: &bytes[..bytes.len() - 4],
        pos: start,
    };
    let mut stores = Vec::new();
    for sh in &header.stores {
        let mut store = ParamStore::<S>::new();
        for eh in &sh.entries {
            let len: usize = eh.shape.iter().product();
            let mut read = || -> Result<NdArray<S>> {
                let raw = r.take(len * S::BYTES)?;
                NdArray::from_vec(eh.shape.clone(), raw.chunks_exact(S::BYTES).map(S::from_le_slice).collect())
            };
            let value = read()?;
            let adam_m = read()?;
            let adam_v = read()?;
            store.insert_entry(
                eh.name.clone(),
                ParamEntry {
                    grad: NdArray::zeros(&eh.shape),
                    value,
                    adam_m,
                    adam_v,
                },
            )?;
        }
        store.set_step_count(sh.step_count);
        stores.push((sh.name.clone(), store));
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    let mut take = |name: &str| -> Result<ParamStore<S>> {
        let i = stores
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no {name} parameters")))?;
        Ok(stores.remove(i).1)
    };
    let spec = header.model;
    let suite = EncoderSuite::from_parts(spec.suite.clone(), take("phi")?, take("psi")?, take("g")?, take("h")?)?;
    let id_head = match spec.id_head {
        Some(h) => {
            let p = take("id_head")?;
            h.check_params(&p)?;
            Some((h, p))
        }
        None => None,
    };
    if !stores.is_empty() {
        return Err(Error::Checkpoint(format!("unexpected parameter store {}", stores[0].0)));
    }
    Ok(Checkpoint {
        config: header.config,
        model: PretrainModel { suite, id_head },
        step: header.step,
        dataset_fingerprint: header.dataset_fingerprint,
        metric_tail: header.metric_tail,
    })
}

/// Decodes a checkpoint stored with element type `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    decode_as::<T>(bytes)
}

/// Decodes a checkpoint of either element type, converting to `T`.
pub fn decode_checkpoint_cast<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let c = match checkpoint_dtype(bytes)? {
        DType::F32 => cast(decode_as::<f32>(bytes)?),
        DType::F64 => cast(decode_as::<f64>(bytes)?),
    };
    Ok(c)
}

fn cast<S: Scalar, T: Scalar>(c: Checkpoint<S>) -> Checkpoint<T> {
    Checkpoint {
        model: c.model.cast(),
        config: c.config,
        step: c.step,
        dataset_fingerprint: c.dataset_fingerprint,
        metric_tail: c.metric_tail,
    }
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| annotate(e, path))
}

pub fn load_checkpoint_cast<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint_cast(&bytes).map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    }
}
