use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde_json::Value;

use super::train::TrainState;
use super::vocab::Vocabulary;
use crate::nn::ParamGroup;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "speechstyle-checkpoint-v1";

/// Everything read back from a checkpoint file.
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub vocab: Vocabulary,
    pub state: Option<TrainState>,
    /// SHA-256 of every saved group, as computed at save time.
    pub digests: BTreeMap<String, String>,
    /// Keyed `group/name`.
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Tensors of one group with the group prefix removed.
    pub fn group(&self, name: &str) -> BTreeMap<String, Tensor> {
        let prefix = format!("{name}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v.clone())))
            .collect()
    }

    /// Loads `g` from the file and checks it against the saved digest.
    pub fn restore(&self, g: &ParamGroup) -> Result<()> {
        g.load_from(&self.group(g.name()))?;
        match self.digests.get(g.name()) {
            Some(d) if *d == g.digest()? => Ok(()),
            Some(_) => Err(ckpt_err(format!("group `{}` fails its digest", g.name()))),
            None => Err(ckpt_err(format!("no digest for group `{}`", g.name()))),
        }
    }
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Header metadata key. The fields live in one sorted JSON object because
/// safetensors writes its metadata map in hash order, which would make
/// otherwise identical files differ.
const META_KEY: &str = "speechstyle";

/// Writes a single safetensors file: tensors named `group/name`, with the
/// configuration, vocabulary, training state and digests of every group in
/// the header metadata.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &Value,
    vocab: &Vocabulary,
    state: Option<&TrainState>,
    groups: &[&ParamGroup],
) -> Result<()> {
    let mut buffers: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut digests = BTreeMap::new();
    for g in groups {
        digests.insert(g.name().to_string(), g.digest()?);
        for (name, t) in g.tensors() {
            let flat = t.flatten_all()?;
            let (dtype, bytes) = match t.dtype() {
                DType::F64 => (
                    Dtype::F64,
                    flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                ),
                _ => (
                    Dtype::F32,
                    flat.to_dtype(DType::F32)?
                        .to_vec1::<f32>()?
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .collect(),
                ),
            };
            buffers.push((format!("{}/{name}", g.name()), dtype, t.dims().to_vec(), bytes));
        }
    }
    let views = buffers
        .iter()
        .map(|(n, d, s, b)| Ok((n.clone(), TensorView::new(*d, s.clone(), b).map_err(ckpt_err)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = BTreeMap::new();
    meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    meta.insert("kind".to_string(), kind.to_string());
    meta.insert("config".to_string(), serde_json::to_string(config)?);
    meta.insert("vocab".to_string(), serde_json::to_string(vocab)?);
    meta.insert("digests".to_string(), serde_json::to_string(&digests)?);
    if let Some(s) = state {
        meta.insert("state".to_string(), serde_json::to_string(s)?);
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let header = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
    safetensors::tensor::serialize_to_file(views, Some(header), path).map_err(ckpt_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(ckpt_err)?;
    let meta: BTreeMap<String, String> = match header.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
        Some(text) => serde_json::from_str(text)?,
        None => return Err(ckpt_err("missing header metadata")),
    };
    let field = |k: &str| meta.get(k).ok_or_else(|| ckpt_err(format!("missing `{k}` metadata")));
    if field("format")? != CHECKPOINT_FORMAT {
        return Err(ckpt_err(format!("unknown format `{}`", field("format")?)));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(ckpt_err)?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let shape = view.shape().to_vec();
        let t = match view.dtype() {
            Dtype::F64 => {
                let v: Vec<f64> = view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, shape, &Device::Cpu)?
            }
            Dtype::F32 => {
                let v: Vec<f32> = view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, shape, &Device::Cpu)?
            }
            other => return Err(ckpt_err(format!("tensor `{name}` has unsupported dtype {other}"))),
        };
        tensors.insert(name, t);
    }
    let state = match meta.get("state") {
        Some(s) => Some(serde_json::from_str(s)?),
        None => None,
    };
    let ckpt = Checkpoint {
        kind: field("kind")?.clone(),
        config: serde_json::from_str(field("config")?)?,
        vocab: serde_json::from_str(field("vocab")?)?,
        state,
        digests: serde_json::from_str(field("digests")?)?,
        tensors,
    };
    Ok(ckpt)
}
