//! Safetensors checkpoints: named `f64` arrays plus JSON metadata.

use std::collections::HashMap;
use std::path::Path;

use factorspan_core::builder::{TokenEncoding, Tokenizer};
use factorspan_core::schema::{Schema, SchemaVersion};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamStore};
use crate::encoder::{EncoderConfig, ParamSource};
use crate::heads::{HeadConfig, Model, ModelKind, RawOutput};
use crate::optim::{AdamW, AdamWConfig};
use crate::tokenizer::WordPiece;
use crate::ModelError;

pub const FORMAT: &str = "factorspan.checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const OPT_M: &str = "optimizer.m.";
const OPT_V: &str = "optimizer.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub schema_version: SchemaVersion,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: usize,
    /// Dev macro-F1 after each completed epoch.
    pub dev_history: Vec<f64>,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// Saved optimizer moments, present in checkpoints meant for resuming.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl OptimizerState {
    pub fn from_adamw(opt: &AdamW) -> OptimizerState {
        OptimizerState { cfg: opt.cfg, t: opt.t, m: opt.m.clone(), v: opt.v.clone() }
    }

    pub fn into_adamw(self) -> AdamW {
        AdamW { cfg: self.cfg, m: self.m, v: self.v, t: self.t }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tokenizer: WordPiece,
    pub store: ParamStore,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn schema(&self) -> Schema {
        Schema::new(self.meta.schema_version)
    }

    pub fn encode(&self, text: &str) -> TokenEncoding {
        self.tokenizer.encode(text)
    }

    /// Tokenizes and runs the model in eval mode.
    pub fn predict_text(&self, text: &str) -> Result<(TokenEncoding, RawOutput), ModelError> {
        let enc = self.tokenizer.encode(text);
        let out = self.model.predict(&self.store, &enc)?;
        Ok((enc, out))
    }
}

fn to_bytes(m: &Mat) -> Vec<u8> {
    m.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_view(name: &str, view: &TensorView) -> Result<Mat, ModelError> {
    let shape = view.shape();
    let (rows, cols) = match *shape {
        [r, c] => (r, c),
        [n] => (1, n),
        _ => return Err(ModelError::Format(format!("tensor {name} has rank {}", shape.len()))),
    };
    let data: Vec<f64> = match view.dtype() {
        Dtype::F64 => view.data().chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        Dtype::F32 => view.data().chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        other => return Err(ModelError::Format(format!("tensor {name} has unsupported dtype {other:?}"))),
    };
    Mat::from_shape_vec((rows, cols), data).map_err(|e| ModelError::Format(format!("tensor {name}: {e}")))
}

/// Reads every tensor of a safetensors buffer as an `f64` matrix, with the
/// file's metadata.
pub fn read_tensors(bytes: &[u8]) -> Result<(HashMap<String, Mat>, HashMap<String, String>), ModelError> {
    let (_, header) = SafeTensors::read_metadata(bytes)?;
    let metadata = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(bytes)?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        out.insert(name.clone(), from_view(&name, &view)?);
    }
    Ok((out, metadata))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let mut named: Vec<(String, Vec<usize>, Vec<u8>)> = ckpt
        .store
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec(), to_bytes(&p.value)))
        .collect();
    let mut metadata = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("meta".to_string(), serde_json::to_string(&ckpt.meta)?),
        ("vocab".to_string(), ckpt.tokenizer.to_json()),
    ]);
    if let Some(opt) = &ckpt.optimizer {
        for (i, p) in ckpt.store.params().iter().enumerate() {
            named.push((format!("{OPT_M}{}", p.name), p.value.shape().to_vec(), to_bytes(&opt.m[i])));
            named.push((format!("{OPT_V}{}", p.name), p.value.shape().to_vec(), to_bytes(&opt.v[i])));
        }
        metadata.insert("optimizer".into(), serde_json::to_string(&(opt.cfg, opt.t))?);
    }
    let views = named
        .iter()
        .map(|(n, shape, data)| Ok((n.as_str(), TensorView::new(Dtype::F64, shape.clone(), data)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let bytes = safetensors::serialize(views, Some(metadata))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io_at(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| ModelError::io_at(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ModelError::io_at(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::io_at(path, e))?;
    let (mut tensors, metadata) = read_tensors(&bytes)?;
    let field = |k: &str| metadata.get(k).ok_or_else(|| ModelError::Format(format!("{}: no {k} metadata", path.display())));
    if field("format")? != FORMAT {
        return Err(ModelError::Format(format!("{}: not a {FORMAT} file", path.display())));
    }
    let version: u32 = field("format_version")?.parse().map_err(|_| ModelError::Format("bad format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Format(format!("checkpoint format version {version}, expected {FORMAT_VERSION}")));
    }
    let meta: CheckpointMeta = serde_json::from_str(field("meta")?)?;
    let tokenizer = WordPiece::from_json(field("vocab")?)?;
    let mut opt_tensors: HashMap<String, Mat> = HashMap::new();
    tensors.retain(|k, v| {
        if k.starts_with(OPT_M) || k.starts_with(OPT_V) {
            opt_tensors.insert(k.clone(), std::mem::take(v));
            false
        } else {
            true
        }
    });
    let mut store = ParamStore::new();
    let schema = Schema::new(meta.schema_version);
    let model = Model::declare(
        meta.kind,
        &meta.encoder,
        &meta.head,
        &schema,
        &mut ParamSource::Load { store: &mut store, values: &mut tensors },
    )?;
    if let Some(extra) = tensors.keys().next() {
        return Err(ModelError::Format(format!("unexpected tensor {extra} in checkpoint")));
    }
    let optimizer = match metadata.get("optimizer") {
        None => None,
        Some(json) => {
            let (cfg, t): (AdamWConfig, u64) = serde_json::from_str(json)?;
            let mut take = |prefix: &str, name: &str| {
                opt_tensors
                    .remove(&format!("{prefix}{name}"))
                    .ok_or_else(|| ModelError::Format(format!("missing optimizer state for {name}")))
            };
            let mut m = Vec::with_capacity(store.len());
            let mut v = Vec::with_capacity(store.len());
            for p in store.params() {
                m.push(take(OPT_M, &p.name)?);
                v.push(take(OPT_V, &p.name)?);
            }
            Some(OptimizerState { cfg, t, m, v })
        }
    };
    Ok(Checkpoint { meta, tokenizer, store, model, optimizer })
}
