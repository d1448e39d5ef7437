//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json          UTF-8 JSON manifest
//! <dir>/ep_<task>_<idx>.bin    one file per episode
//! ```
//!
//! Episode files are little-endian. Header: the 8 magic bytes `TFEPISOD`
//! followed by u64 fields `version, task_id, index, T, obs_len, action_dim,
//! latent_dim, behavior_code`. Then four blocks (observations, actions,
//! rewards, true latents), each a u64 element count followed by that many
//! f32 values in row-major order. The manifest stores the CRC32 and byte
//! length of every episode file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::episode::{BehaviorTag, Episode};
use crate::data::task::{ObsKind, TaskSpec};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const EPISODE_MAGIC: &[u8; 8] = b"TFEPISOD";
const EPISODE_VERSION: u64 = 1;
const HEADER_FIELDS: usize = 8;

/// Largest (K, W) the dataset promises to support: every episode has at
/// least `k + w + 1` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEnvelope {
    pub k: usize,
    pub w: usize,
}

impl WindowEnvelope {
    pub fn min_length(&self) -> usize {
        self.k + self.w + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub spec: TaskSpec,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeEntry {
    pub file: String,
    pub task_id: u64,
    pub index: u64,
    pub length: usize,
    pub behavior: BehaviorTag,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub obs_kind: ObsKind,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub dtype: String,
    pub endianness: String,
    pub envelope: WindowEnvelope,
    pub tasks: Vec<TaskEntry>,
    pub episodes: Vec<EpisodeEntry>,
}

impl DatasetManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    /// Checksum of the serialized manifest, recorded by checkpoints.
    pub fn fingerprint(&self) -> String {
        format!("crc32:{:08x}", crc32fast::hash(&self.to_bytes()))
    }
}

/// Episodes of several tasks sharing observation and action layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskDataset {
    manifest: DatasetManifest,
    episodes: Vec<Episode>,
    by_task: Vec<(u64, Vec<usize>)>,
}

pub fn episode_file_name(task_id: u64, index: u64) -> String {
    format!("ep_{task_id}_{index}.bin")
}

pub fn encode_episode(ep: &Episode) -> Vec<u8> {
    let blocks: [&[f32]; 4] = [&ep.observations, &ep.actions, &ep.rewards, ep.true_latents()];
    let payload: usize = blocks.iter().map(|b| 8 + 4 * b.len()).sum();
    let mut out = Vec::with_capacity(8 + 8 * HEADER_FIELDS + payload);
    out.extend_from_slice(EPISODE_MAGIC);
    for v in [
        EPISODE_VERSION,
        ep.task_id,
        ep.index,
        ep.len() as u64,
        ep.obs_len as u64,
        ep.action_dim as u64,
        ep.latent_dim as u64,
        ep.behavior.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for b in blocks {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                detail: format!("file ends at byte {} but {} more bytes were expected", self.buf.len(), self.pos + n - self.buf.len()),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self, expected: usize, what: &str) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::Format(format!(
                "{}: {what} block holds {n} values, header implies {expected}",
                self.path.display()
            )));
        }
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_episode(bytes: &[u8], path: &Path) -> Result<Episode> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != EPISODE_MAGIC {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "bad magic".into(),
        });
    }
    let version = r.u64()?;
    if version != EPISODE_VERSION {
        return Err(Error::Format(format!("{}: episode format version {version}", path.display())));
    }
    let task_id = r.u64()?;
    let index = r.u64()?;
    let t = r.u64()? as usize;
    let obs_len = r.u64()? as usize;
    let action_dim = r.u64()? as usize;
    let latent_dim = r.u64()? as usize;
    let behavior = BehaviorTag::from_code(r.u64()?)
        .ok_or_else(|| Error::Format(format!("{}: unknown behavior code", path.display())))?;
    let observations = r.block(t * obs_len, "observation")?;
    let actions = r.block(t * action_dim, "action")?;
    let rewards = r.block(t, "reward")?;
    let latents = r.block(t * latent_dim, "latent")?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Episode::new(task_id, index, behavior, obs_len, action_dim, latent_dim, observations, actions, rewards, latents)
}

impl MultitaskDataset {
    /// Builds a dataset and its manifest. Every episode must match the shared
    /// layout and be long enough for the window envelope.
    pub fn new(tasks: Vec<TaskSpec>, episodes: Vec<Episode>, envelope: WindowEnvelope) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::Dataset("a dataset needs at least one task".into()))?;
        let (obs_kind, action_dim, latent_dim) = (first.obs_kind, first.action_dim, first.latent_dim);
        for t in &tasks {
            t.validate()?;
            if t.obs_kind != obs_kind || t.action_dim != action_dim || t.latent_dim != latent_dim {
                return Err(Error::Dataset(format!(
                    "task {} layout differs from task {} (tasks must share observation and action dims)",
                    t.task_id, first.task_id
                )));
            }
        }
        let mut counts: BTreeMap<u64, usize> = tasks.iter().map(|t| (t.task_id, 0)).collect();
        if counts.len() != tasks.len() {
            return Err(Error::Dataset("duplicate task ids".into()));
        }
        let mut entries = Vec::with_capacity(episodes.len());
        for ep in &episodes {
            let c = counts
                .get_mut(&ep.task_id)
                .ok_or_else(|| Error::Dataset(format!("episode references unknown task {}", ep.task_id)))?;
            *c += 1;
            if ep.obs_len != obs_kind.len() || ep.action_dim != action_dim || ep.latent_dim != latent_dim {
                return Err(Error::Format(format!(
                    "episode {}/{} has dims (obs {}, action {}, latent {}) but the dataset declares ({}, {}, {})",
                    ep.task_id,
                    ep.index,
                    ep.obs_len,
                    ep.action_dim,
                    ep.latent_dim,
                    obs_kind.len(),
                    action_dim,
                    latent_dim
                )));
            }
            if ep.len() < envelope.min_length() {
                return Err(Error::Dataset(format!(
                    "episode {}/{} has {} steps; K={} W={} needs at least {}",
                    ep.task_id,
                    ep.index,
                    ep.len(),
                    envelope.k,
                    envelope.w,
                    envelope.min_length()
                )));
            }
            let bytes = encode_episode(ep);
            entries.push(EpisodeEntry {
                file: episode_file_name(ep.task_id, ep.index),
                task_id: ep.task_id,
                index: ep.index,
                length: ep.len(),
                behavior: ep.behavior,
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            });
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            obs_kind,
            action_dim,
            latent_dim,
            dtype: "f32".into(),
            endianness: "little".into(),
            envelope,
            tasks: tasks
                .into_iter()
                .map(|spec| {
                    let episodes = counts[&spec.task_id];
                    TaskEntry { spec, episodes }
                })
                .collect(),
            episodes: entries,
        };
        Ok(Self::from_parts(manifest, episodes))
    }

    fn from_parts(manifest: DatasetManifest, episodes: Vec<Episode>) -> Self {
        let mut by_task: Vec<(u64, Vec<usize>)> = manifest.tasks.iter().map(|t| (t.spec.task_id, Vec::new())).collect();
        for (i, ep) in episodes.iter().enumerate() {
            if let Some((_, v)) = by_task.iter_mut().find(|(id, _)| *id == ep.task_id) {
                v.push(i);
            }
        }
        by_task.retain(|(_, v)| !v.is_empty());
        MultitaskDataset {
            manifest,
            episodes,
            by_task,
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn fingerprint(&self) -> String {
        self.manifest.fingerprint()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    /// `(task_id, episode indices)` for every task with at least one episode.
    pub fn by_task(&self) -> &[(u64, Vec<usize>)] {
        &self.by_task
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.manifest.tasks.iter().map(|t| &t.spec)
    }

    pub fn task(&self, task_id: u64) -> Option<&TaskSpec> {
        self.tasks().find(|t| t.task_id == task_id)
    }

    pub fn obs_kind(&self) -> ObsKind {
        self.manifest.obs_kind
    }

    pub fn action_dim(&self) -> usize {
        self.manifest.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.manifest.latent_dim
    }

    pub fn min_episode_len(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).min().unwrap_or(0)
    }

    /// Episodes of one task, in index order.
    pub fn task_episodes(&self, task_id: u64) -> Vec<&Episode> {
        self.by_task
            .iter()
            .find(|(id, _)| *id == task_id)
            .map(|(_, idx)| idx.iter().map(|&i| &self.episodes[i]).collect())
            .unwrap_or_default()
    }
}

pub fn save_dataset(dataset: &MultitaskDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ep, entry) in dataset.episodes.iter().zip(&dataset.manifest.episodes) {
        let path = dir.join(&entry.file);
        fs::write(&path, encode_episode(ep)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, dataset.manifest.to_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {}",
            path.display(),
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32" || manifest.endianness != "little" {
        return Err(Error::Format(format!(
            "{}: unsupported encoding {} / {}",
            path.display(),
            manifest.dtype,
            manifest.endianness
        )));
    }
    Ok(manifest)
}

/// Loads and validates a dataset directory: checksums, dims and counts must
/// all agree with the manifest.
pub fn load_dataset(dir: &Path) -> Result<MultitaskDataset> {
    let manifest = read_manifest(dir)?;
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for entry in &manifest.episodes {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() as u64 != entry.bytes || crc32fast::hash(&bytes) != entry.crc32 {
            return Err(Error::Corrupt {
                path,
                detail: format!(
                    "checksum mismatch ({} bytes, manifest says {} bytes crc {:08x})",
                    bytes.len(),
                    entry.bytes,
                    entry.crc32
                ),
            });
        }
        let ep = decode_episode(&bytes, &path)?;
        if ep.obs_len != manifest.obs_kind.len() || ep.action_dim != manifest.action_dim || ep.latent_dim != manifest.latent_dim {
            return Err(Error::Format(format!(
                "{}: dims (obs {}, action {}, latent {}) disagree with manifest ({}, {}, {})",
                path.display(),
                ep.obs_len,
                ep.action_dim,
                ep.latent_dim,
                manifest.obs_kind.len(),
                manifest.action_dim,
                manifest.latent_dim
            )));
        }
        if ep.task_id != entry.task_id || ep.index != entry.index || ep.len() != entry.length || ep.behavior != entry.behavior {
            return Err(Error::Format(format!("{}: header disagrees with manifest entry", path.display())));
        }
        *counts.entry(ep.task_id).or_default() += 1;
        episodes.push(ep);
    }
    for t in &manifest.tasks {
        let have = counts.get(&t.spec.task_id).copied().unwrap_or(0);
        if have != t.episodes {
            return Err(Error::Format(format!(
                "task {} lists {} episodes but {} are present",
                t.spec.task_id, t.episodes, have
            )));
        }
    }
    Ok(MultitaskDataset::from_parts(manifest, episodes))
}
