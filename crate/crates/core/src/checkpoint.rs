//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   "LCBMCKPT"
//! version   u32
//! hlen      u64       length of the JSON header in bytes
//! header    hlen bytes
//! params    f64 values, tensors concatenated in header order
//! sha256    32 bytes over everything above
//! ```
//!
//! The header records the architecture, data dimensions, pairing plans,
//! gate subset and tensor shapes, so a file can be rebuilt without the
//! dataset it was trained on.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::logic::LogicLayer;
use crate::model::{build_model, ArchConfig, DataDims, LayerConfig, Model};

pub const MAGIC: &[u8; 8] = b"LCBMCKPT";
pub const SCHEMA_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: String,
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub concept_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub gate_subset: Vec<u8>,
    pub layer_widths: Vec<usize>,
    pub pairing: Vec<Vec<(usize, usize)>>,
    pub dtype: String,
    /// Hex sha256 of the run configuration, empty when unknown.
    pub config_digest: String,
    #[serde(default)]
    pub concept_names: Vec<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// Run-level facts stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub config_digest: String,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub header: CheckpointHeader,
}

fn logic_layers(model: &Model) -> &[LogicLayer] {
    match model {
        Model::Logic(m) => &m.layers,
        Model::Dual(m) => &m.logic.layers,
        Model::Vanilla(_) => &[],
    }
}

/// Hex sha256 of arbitrary bytes, used for config digests.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn header_for(model: &Model, arch: &ArchConfig, meta: &CheckpointMeta) -> CheckpointHeader {
    let layers = logic_layers(model);
    CheckpointHeader {
        kind: model.kind_name().into(),
        arch: arch.clone(),
        input_dim: model.input_dim(),
        concept_dim: model.concept_dim(),
        classes: model.class_count(),
        seed: model.seed(),
        gate_subset: layers
            .first()
            .map(|l| l.mixture.subset().ids().iter().map(|g| g.index() as u8).collect())
            .unwrap_or_default(),
        layer_widths: layers.iter().map(LogicLayer::width).collect(),
        pairing: layers.iter().map(|l| l.plan.pairs().to_vec()).collect(),
        dtype: "f64le".into(),
        config_digest: meta.config_digest.clone(),
        concept_names: meta.concept_names.clone(),
        class_names: meta.class_names.clone(),
        tensors: model
            .params()
            .into_iter()
            .map(|(name, p)| TensorEntry { name, len: p.len() })
            .collect(),
    }
}

pub fn to_bytes(model: &Model, arch: &ArchConfig, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_for(model, arch, meta))
        .map_err(|e| Error::InvalidConfig(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 8 * model.param_count() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in model.params() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptChecksum(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt("sha256 mismatch"));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[PREFIX_LEN..header_end])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    if header.dtype != "f64le" {
        return Err(corrupt(format!("unsupported dtype {}", header.dtype)));
    }
    let payload = &body[header_end..];
    let expected: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != 8 * expected {
        return Err(corrupt(format!(
            "payload holds {} bytes, header declares {expected} values",
            payload.len()
        )));
    }

    let mut model = rebuild(&header)?;
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    {
        let params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(corrupt("tensor count does not match architecture"));
        }
        for ((name, slot), entry) in params.into_iter().zip(&header.tensors) {
            if name != entry.name || slot.len() != entry.len {
                return Err(corrupt(format!(
                    "tensor {} ({}) does not match architecture tensor {name} ({})",
                    entry.name,
                    entry.len,
                    slot.len()
                )));
            }
            for v in slot.iter_mut() {
                *v = values.next().expect("payload length checked");
            }
        }
    }
    Ok(Checkpoint { model, header })
}

/// Builds the parameter skeleton: the stored pairing plans replace whatever
/// pairing mode the architecture asked for.
fn rebuild(header: &CheckpointHeader) -> Result<Model> {
    let mut arch = header.arch.clone();
    if arch.layers.len() != header.pairing.len() {
        return Err(corrupt("pairing plans do not match layer count"));
    }
    arch.layers = header
        .pairing
        .iter()
        .map(|pairs| LayerConfig::explicit(pairs.clone()))
        .collect();
    let model = build_model(
        &arch,
        DataDims {
            input_dim: header.input_dim,
            concept_dim: header.concept_dim,
            classes: header.classes,
        },
        header.seed,
        None,
    )?;
    if model.kind_name() != header.kind {
        return Err(corrupt(format!(
            "header kind {} does not match architecture kind {}",
            header.kind,
            model.kind_name()
        )));
    }
    Ok(model)
}

pub fn save(path: impl AsRef<Path>, model: &Model, arch: &ArchConfig, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, arch, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
