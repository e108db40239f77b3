//! Loads BERT weights saved in the Hugging Face safetensors layout.
//!
//! Expects a directory with `config.json`, `vocab.txt` and
//! `model.safetensors`. Linear weights are transposed to input-major, the
//! first token-type embedding is folded into the position table (single
//! segment inputs), and the pooler is ignored.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::autodiff::Mat;
use crate::checkpoint::read_tensors;
use crate::encoder::EncoderConfig;
use crate::tokenizer::WordPiece;
use crate::ModelError;

#[derive(Debug, Clone, Deserialize)]
struct BertJson {
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    vocab_size: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f64,
    #[serde(default = "default_act")]
    hidden_act: String,
    #[serde(default)]
    hidden_dropout_prob: Option<f64>,
}

fn default_eps() -> f64 {
    1e-12
}

fn default_act() -> String {
    "gelu".into()
}

pub struct Pretrained {
    pub config: EncoderConfig,
    pub tokenizer: WordPiece,
    /// Encoder parameters under this crate's names.
    pub tensors: HashMap<String, Mat>,
}

fn take(t: &mut HashMap<String, Mat>, names: &[String]) -> Result<Mat, ModelError> {
    for n in names {
        for prefix in ["", "bert."] {
            if let Some(m) = t.remove(&format!("{prefix}{n}")) {
                return Ok(m);
            }
        }
    }
    Err(ModelError::Format(format!("pretrained weights lack {}", names[0])))
}

fn ln_names(base: &str) -> (Vec<String>, Vec<String>) {
    (
        vec![format!("{base}.weight"), format!("{base}.gamma")],
        vec![format!("{base}.bias"), format!("{base}.beta")],
    )
}

/// Reads a BERT directory. `max_len` caps the position table (default: the
/// model's own limit); `lowercase` selects uncased tokenization.
pub fn load_bert(dir: &Path, max_len: Option<usize>, lowercase: bool) -> Result<Pretrained, ModelError> {
    let cfg_path = dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| ModelError::io_at(&cfg_path, e))?;
    let bert: BertJson = serde_json::from_str(&text)?;
    if bert.hidden_act != "gelu" {
        return Err(ModelError::Format(format!("unsupported activation {:?}", bert.hidden_act)));
    }
    let max_len = max_len.unwrap_or(bert.max_position_embeddings).min(bert.max_position_embeddings);
    let vocab_path = dir.join("vocab.txt");
    let tokenizer = WordPiece::from_vocab_txt(&vocab_path, lowercase, max_len)?;
    if tokenizer.vocab_size() != bert.vocab_size {
        return Err(ModelError::Format(format!(
            "vocab.txt has {} entries, config says {}",
            tokenizer.vocab_size(),
            bert.vocab_size
        )));
    }
    let weights_path = dir.join("model.safetensors");
    let bytes = std::fs::read(&weights_path).map_err(|e| ModelError::io_at(&weights_path, e))?;
    let (mut t, _) = read_tensors(&bytes)?;

    let mut out = HashMap::new();
    let one = |n: &str| vec![n.to_string()];
    out.insert("encoder.embeddings.word".into(), take(&mut t, &one("embeddings.word_embeddings.weight"))?);
    let pos = take(&mut t, &one("embeddings.position_embeddings.weight"))?;
    let token_type = take(&mut t, &one("embeddings.token_type_embeddings.weight"))?;
    let pos = pos.slice(ndarray::s![..max_len, ..]).to_owned() + &token_type.row(0);
    out.insert("encoder.embeddings.position".into(), pos);
    let (g, b) = ln_names("embeddings.LayerNorm");
    out.insert("encoder.embeddings.ln.gamma".into(), row(take(&mut t, &g)?));
    out.insert("encoder.embeddings.ln.beta".into(), row(take(&mut t, &b)?));
    for l in 0..bert.num_hidden_layers {
        let src = format!("encoder.layer.{l}");
        let dst = format!("encoder.layer{l}");
        let mut dense = |from: &str, to: &str| -> Result<(), ModelError> {
            let w = take(&mut t, &one(&format!("{src}.{from}.weight")))?;
            out.insert(format!("{dst}.{to}.weight"), w.t().to_owned());
            out.insert(format!("{dst}.{to}.bias"), row(take(&mut t, &one(&format!("{src}.{from}.bias")))?));
            Ok(())
        };
        dense("attention.self.query", "attn.query")?;
        dense("attention.self.key", "attn.key")?;
        dense("attention.self.value", "attn.value")?;
        dense("attention.output.dense", "attn.output")?;
        dense("intermediate.dense", "ffn.in")?;
        dense("output.dense", "ffn.out")?;
        for (from, to) in [("attention.output.LayerNorm", "attn.ln"), ("output.LayerNorm", "ffn.ln")] {
            let (g, b) = ln_names(&format!("{src}.{from}"));
            out.insert(format!("{dst}.{to}.gamma"), row(take(&mut t, &g)?));
            out.insert(format!("{dst}.{to}.beta"), row(take(&mut t, &b)?));
        }
    }
    let config = EncoderConfig {
        vocab_source: vocab_path.display().to_string(),
        vocab_size: bert.vocab_size,
        hidden: bert.hidden_size,
        layers: bert.num_hidden_layers,
        heads: bert.num_attention_heads,
        intermediate: bert.intermediate_size,
        max_len,
        dropout: bert.hidden_dropout_prob.unwrap_or(0.1),
        cased: !lowercase,
        layer_norm_eps: bert.layer_norm_eps,
    };
    config.validate()?;
    Ok(Pretrained { config, tokenizer, tensors: out })
}

/// 1-D tensors come back as 1×n already; this only asserts it.
fn row(m: Mat) -> Mat {
    debug_assert_eq!(m.nrows(), 1);
    m
}
