//! Versioned policy checkpoints. Layout: magic `HFCK`, format version,
//! JSON header (configs, frozen normalizer stats, tensor table, grasp
//! archive hash), then the raw weight blobs as little-endian f64 in header
//! order. No timestamps: identical state produces identical bytes.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::env::EnvConfig;
use super::net::Module;
use super::normalizer::ObsNormalizer;
use super::policy::{Policy, PolicyConfig};
use super::ppo::PpoConfig;

pub const MAGIC: [u8; 4] = *b"HFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    policy: PolicyConfig,
    env: EnvConfig,
    ppo: PpoConfig,
    normalizer: ObsNormalizer,
    grasp_archive_hash: Option<String>,
    tensors: Vec<TensorMeta>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub policy_cfg: PolicyConfig,
    pub env_cfg: EnvConfig,
    pub ppo_cfg: PpoConfig,
    pub normalizer: ObsNormalizer,
    pub grasp_archive_hash: Option<String>,
    tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    /// Snapshots the policy weights and freezes the normalizer statistics:
    /// whatever consumes this checkpoint sees fixed normalization.
    pub fn capture(
        policy: &mut Policy,
        normalizer: &ObsNormalizer,
        env_cfg: EnvConfig,
        ppo_cfg: PpoConfig,
        grasp_archive_hash: Option<String>,
    ) -> Checkpoint {
        let mut tensors = Vec::new();
        policy.visit(&mut |name, w, _| tensors.push((name.to_string(), w.to_vec())));
        let mut normalizer = normalizer.clone();
        normalizer.freeze();
        Checkpoint {
            policy_cfg: policy.cfg.clone(),
            env_cfg,
            ppo_cfg,
            normalizer,
            grasp_archive_hash,
            tensors,
        }
    }

    /// Reconstructs the policy, validating every tensor against the shapes
    /// the config implies.
    pub fn build_policy(&self) -> Result<Policy> {
        let mut policy = Policy::new(self.policy_cfg.clone(), 0);
        let mut idx = 0;
        let mut err = None;
        policy.visit(&mut |name, w, _| {
            if err.is_some() {
                return;
            }
            let Some((stored_name, stored)) = self.tensors.get(idx) else {
                err = Some(Error::Validation(format!(
                    "checkpoint is missing tensor {name}"
                )));
                return;
            };
            if stored_name != name {
                err = Some(Error::Validation(format!(
                    "checkpoint tensor order mismatch: expected {name}, found {stored_name}"
                )));
                return;
            }
            if stored.len() != w.len() {
                err = Some(Error::DimensionMismatch {
                    context: "checkpoint tensor length".into(),
                    expected: w.len(),
                    actual: stored.len(),
                });
                return;
            }
            w.copy_from_slice(stored);
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} extra tensors",
                self.tensors.len() - idx
            )));
        }
        Ok(policy)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let wrap = |e: std::io::Error| Error::io("checkpoint stream", e);
        let header = Header {
            policy: self.policy_cfg.clone(),
            env: self.env_cfg,
            ppo: self.ppo_cfg,
            normalizer: self.normalizer.clone(),
            grasp_archive_hash: self.grasp_archive_hash.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, v)| TensorMeta {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Validation(format!("checkpoint header encode: {e}")))?;
        w.write_all(&MAGIC).map_err(wrap)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(wrap)?;
        w.write_u64::<LittleEndian>(header_json.len() as u64)
            .map_err(wrap)?;
        w.write_all(&header_json).map_err(wrap)?;
        for (_, values) in &self.tensors {
            for &v in values {
                w.write_f64::<LittleEndian>(v).map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let wrap = |e: std::io::Error| Error::io("checkpoint stream", e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(wrap)?;
        if magic != MAGIC {
            return Err(Error::Validation(format!(
                "not a checkpoint: bad magic {magic:02x?}"
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(wrap)?;
        if version != VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = r.read_u64::<LittleEndian>().map_err(wrap)? as usize;
        const MAX_HEADER: usize = 16 << 20;
        if header_len > MAX_HEADER {
            return Err(Error::Validation(format!(
                "checkpoint header length {header_len} exceeds {MAX_HEADER}"
            )));
        }
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json).map_err(wrap)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Validation(format!("checkpoint header decode: {e}")))?;
        header.policy.validate()?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        const MAX_TENSOR: usize = 64 << 20;
        for meta in &header.tensors {
            if meta.len > MAX_TENSOR {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} length {} exceeds {MAX_TENSOR}",
                    meta.name, meta.len
                )));
            }
            let mut values = vec![0.0; meta.len];
            r.read_f64_into::<LittleEndian>(&mut values).map_err(wrap)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor {}", meta.name)));
            }
            tensors.push((meta.name.clone(), values));
        }
        Ok(Checkpoint {
            policy_cfg: header.policy,
            env_cfg: header.env,
            ppo_cfg: header.ppo,
            normalizer: header.normalizer,
            grasp_archive_hash: header.grasp_archive_hash,
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = std::io::Cursor::new(bytes);
        let ckpt = Checkpoint::read_from(&mut cursor)?;
        if (cursor.position() as usize) != bytes.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - cursor.position() as usize
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
