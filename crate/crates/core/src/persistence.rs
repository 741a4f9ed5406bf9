//! `.glmodel` archives.
//!
//! Layout (all integers little-endian):
//!
//! | offset          | size | content                                      |
//! |-----------------|------|----------------------------------------------|
//! | 0               | 8    | magic `GLMODEL\0`                            |
//! | 8               | 4    | format version, `u32` (currently 1)          |
//! | 12              | 8    | header length `H` in bytes, `u64`            |
//! | 20              | H    | UTF-8 JSON header                            |
//! | 20 + H          | 8·P  | payload: `P` IEEE-754 `f64` values           |
//! | 20 + H + 8·P    | 32   | SHA-256 of every preceding byte              |
//!
//! The header lists blocks in payload order. Each block's payload is its
//! state tensors back to back: dense `weights` (row-major, out x in) then
//! `bias`; batch norm `gamma`, `beta`, `running_mean`, `running_var`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{HeadKind, InputProfile, LocalizerModel, ModelConfig, UmlpConfig, UmlpModel};
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"GLMODEL\0";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

/// Free-form record of how a model was trained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_rmse: Option<f64>,
    pub final_val_rmse: Option<f64>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub enum SavedModel {
    Localizer(LocalizerModel),
    Umlp(UmlpModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    input_dim: usize,
    layers: Vec<LayerSpec>,
    tensor_lens: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Architecture {
    Localizer { head_kind: HeadKind, config: ModelConfig },
    Umlp { config: UmlpConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    blocks: Vec<BlockHeader>,
    profiles: Vec<InputProfile>,
    training_meta: TrainingMeta,
}

fn block_header(name: &str, net: &Network) -> BlockHeader {
    BlockHeader {
        name: name.to_string(),
        input_dim: net.input_dim(),
        layers: net.specs(),
        tensor_lens: net.state_tensors().iter().map(|t| t.len()).collect(),
    }
}

fn blocks_of(model: &SavedModel) -> Vec<(&'static str, &Network)> {
    match model {
        SavedModel::Localizer(m) => vec![("encoder", &m.encoder), ("base", &m.base), ("head", &m.head)],
        SavedModel::Umlp(m) => vec![("trunk", &m.trunk), ("reg_head", &m.reg_head), ("cls_head", &m.cls_head)],
    }
}

/// Serializes a model into archive bytes.
pub fn to_bytes(model: &SavedModel, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let blocks = blocks_of(model);
    let header = Header {
        architecture: match model {
            SavedModel::Localizer(m) => Architecture::Localizer {
                head_kind: m.head_kind,
                config: m.config.clone(),
            },
            SavedModel::Umlp(m) => Architecture::Umlp { config: m.config.clone() },
        },
        blocks: blocks.iter().map(|(n, net)| block_header(n, net)).collect(),
        profiles: match model {
            SavedModel::Localizer(m) => m.profile.iter().cloned().collect(),
            SavedModel::Umlp(m) => m.profiles.clone(),
        },
        training_meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(PREFIX_LEN + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, net) in &blocks {
        for tensor in net.state_tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Checks framing, version and checksum, then returns the parsed header and
/// the payload slice.
fn open(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Checksum(format!("archive truncated to {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Structure("not a model archive (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let body_len = bytes.len() - DIGEST_LEN;
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest.as_slice() != &bytes[body_len..] {
        return Err(Error::Checksum("content does not match its SHA-256".into()));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body_len)
        .ok_or_else(|| Error::Structure(format!("header length {header_len} exceeds archive")))?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..payload_start])?;
    Ok((header, &bytes[payload_start..body_len]))
}

/// Rebuilds each block from its specs and fills it from the payload.
fn read_blocks(header: &Header, payload: &[u8]) -> Result<Vec<(String, Network)>> {
    let expected: usize = header.blocks.iter().flat_map(|b| &b.tensor_lens).sum();
    if payload.len() != expected * 8 {
        return Err(Error::Validation(format!(
            "payload holds {} values, header declares {expected}",
            payload.len() / 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut out = Vec::new();
    for block in &header.blocks {
        // Initial values are overwritten below; the RNG only satisfies the constructor.
        let mut net = Network::from_specs(block.input_dim, &block.layers, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::Validation(format!("block {}: {e}", block.name)))?;
        let mut tensors = net.state_tensors_mut();
        let lens: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        if lens != block.tensor_lens {
            return Err(Error::Validation(format!(
                "block {}: tensor sizes {:?} do not match architecture {lens:?}",
                block.name, block.tensor_lens
            )));
        }
        for t in tensors.iter_mut() {
            for slot in t.iter_mut() {
                *slot = values.next().expect("length checked");
            }
        }
        out.push((block.name.clone(), net));
    }
    Ok(out)
}

fn take(blocks: &mut Vec<(String, Network)>, name: &str) -> Result<Network> {
    let i = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Structure(format!("archive has no {name} block")))?;
    Ok(blocks.remove(i).1)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(SavedModel, TrainingMeta)> {
    let (header, payload) = open(bytes)?;
    let mut blocks = read_blocks(&header, payload)?;
    let model = match header.architecture {
        Architecture::Localizer { head_kind, config } => SavedModel::Localizer(LocalizerModel {
            encoder: take(&mut blocks, "encoder")?,
            base: take(&mut blocks, "base")?,
            head: take(&mut blocks, "head")?,
            head_kind,
            config,
            profile: header.profiles.into_iter().next(),
        }),
        Architecture::Umlp { config } => SavedModel::Umlp(UmlpModel {
            trunk: take(&mut blocks, "trunk")?,
            reg_head: take(&mut blocks, "reg_head")?,
            cls_head: take(&mut blocks, "cls_head")?,
            config,
            profiles: header.profiles,
        }),
    };
    Ok((model, header.training_meta))
}

pub fn save_model(model: &SavedModel, meta: &TrainingMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(SavedModel, TrainingMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Just the base block of a localizer archive, ready for `swap_base`.
pub fn extract_base(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, payload) = open(&bytes)?;
    if !matches!(header.architecture, Architecture::Localizer { .. }) {
        return Err(Error::Structure("unified-model archive has no base block".into()));
    }
    take(&mut read_blocks(&header, payload)?, "base")
}
