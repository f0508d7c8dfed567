use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierMode;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{build_model, Arch, ModelGraph, Tensor};
use crate::training::TrainingSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RXAF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    FeatureExtractor,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub method: String,
    pub seed: u64,
    pub schedule: Option<TrainingSchedule>,
    pub weights: Option<LossWeights>,
    pub data_digest: Option<String>,
    /// Digest of the frozen feature extractor a classifier was trained on.
    pub fe_digest: Option<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierMeta {
    pub mode: ClassifierMode,
    /// Transmitter id of each class index.
    pub classes: Vec<u32>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Models with their roles, e.g. `fe`, `head`, `ova.3`.
    pub models: Vec<(String, ModelGraph)>,
    pub provenance: Provenance,
    pub classifier: Option<ClassifierMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    role: String,
    arch: Arch,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    provenance: Provenance,
    classifier: Option<ClassifierMeta>,
    models: Vec<ModelEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut models = Vec::new();
    let mut values = Vec::new();
    for (role, m) in &ckpt.models {
        let state = m.state();
        if let Some((n, _)) = state.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFiniteOutput(format!("tensor {n} of {role}")));
        }
        models.push(ModelEntry {
            role: role.clone(),
            arch: m.arch().clone(),
            tensors: state.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        });
        values.extend(state.into_iter().flat_map(|(_, t)| t.into_data()));
    }
    let header = serde_json::to_vec(&Header {
        kind: ckpt.kind,
        provenance: ckpt.provenance.clone(),
        classifier: ckpt.classifier.clone(),
        models,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + values.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a checkpoint and checks it holds the `expected` kind of model.
pub fn decode_checkpoint(bytes: &[u8], expected: CheckpointKind) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("checkpoint does not start with RXAF".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes.get(12..12 + hlen).ok_or_else(|| Error::Integrity("checkpoint header truncated".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    if header.kind != expected {
        return Err(Error::ArchMismatch(format!("checkpoint holds {:?}, expected {expected:?}", header.kind)));
    }
    let mut body = bytes[12 + hlen..].chunks_exact(8);
    if body.remainder().len() != 0 {
        return Err(Error::Integrity("checkpoint body is not a whole number of f64 values".into()));
    }
    let mut models = Vec::new();
    for entry in header.models {
        let mut model = build_model(&entry.arch, 0, 0)?;
        let mut state = Vec::new();
        for t in entry.tensors {
            let n: usize = t.shape.iter().product();
            let data: Vec<f64> = body
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.len() != n {
                return Err(Error::Integrity(format!("checkpoint truncated in tensor {}", t.name)));
            }
            state.push((t.name, Tensor::new(t.shape, data)?));
        }
        model.load_state(&state)?;
        models.push((entry.role, model));
    }
    if body.next().is_some() {
        return Err(Error::Integrity("trailing bytes after checkpoint tensors".into()));
    }
    Ok(Checkpoint { kind: header.kind, models, provenance: header.provenance, classifier: header.classifier })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: CheckpointKind) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, expected)
}
