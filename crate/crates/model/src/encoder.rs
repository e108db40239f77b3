//! Post-layer-norm bidirectional transformer encoder.

use std::collections::HashMap;

use factorspan_core::builder::TokenEncoding;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Where the vocabulary came from: `trained` or a vocabulary file path.
    pub vocab_source: String,
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub cased: bool,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// 2 layers, 128 hidden, 4 heads, length 128.
    pub fn desk(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_source: "trained".into(),
            vocab_size,
            hidden: 128,
            layers: 2,
            heads: 4,
            intermediate: 512,
            max_len: 128,
            dropout: 0.1,
            cased: true,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidInput(m));
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden size {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if self.vocab_size == 0 || self.layers == 0 || self.intermediate == 0 || self.max_len < 2 {
            return bad(format!("degenerate encoder config {self:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Standard deviation of initial weights.
pub const INIT_STD: f64 = 0.02;

/// Registers or looks up parameters by name, so that fresh models and
/// models restored from a checkpoint share one construction path.
pub enum ParamSource<'a> {
    /// Fresh parameters initialised from `rng`.
    Create { store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng },
    /// Parameters already present in `store`.
    Bind { store: &'a ParamStore },
    /// Values taken (and removed) from `values`, added to `store` in
    /// declaration order.
    Load { store: &'a mut ParamStore, values: &'a mut HashMap<String, Mat> },
    /// Like `Load` for names present in `values`, like `Create` otherwise.
    Warm { store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, values: &'a mut HashMap<String, Mat> },
}

impl ParamSource<'_> {
    pub fn get(&mut self, name: &str, shape: (usize, usize), init: Init) -> Result<ParamId, ModelError> {
        match self {
            ParamSource::Create { store, rng } => {
                let value = match init {
                    Init::Zeros => Mat::zeros(shape),
                    Init::Ones => Mat::ones(shape),
                    Init::Normal => {
                        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                        Array2::from_shape_simple_fn(shape, || normal.sample(*rng))
                    }
                };
                Ok(store.add(name, value, matches!(init, Init::Normal)))
            }
            ParamSource::Bind { store } => {
                let id = store.id(name).ok_or_else(|| ModelError::Format(format!("missing parameter {name}")))?;
                let found = store.get(id).dim();
                if found != shape {
                    return Err(ModelError::Format(format!("parameter {name} has shape {found:?}, expected {shape:?}")));
                }
                Ok(id)
            }
            ParamSource::Warm { store, rng, values } => {
                if values.contains_key(name) {
                    ParamSource::Load { store, values }.get(name, shape, init)
                } else {
                    ParamSource::Create { store, rng }.get(name, shape, init)
                }
            }
            ParamSource::Load { store, values } => {
                let value = values.remove(name).ok_or_else(|| ModelError::Format(format!("missing parameter {name}")))?;
                if value.dim() != shape {
                    return Err(ModelError::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        value.dim()
                    )));
                }
                Ok(store.add(name, value, matches!(init, Init::Normal)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn declare(src: &mut ParamSource, name: &str, inp: usize, out: usize) -> Result<Dense, ModelError> {
        Ok(Dense {
            w: src.get(&format!("{name}.weight"), (inp, out), Init::Normal)?,
            b: src.get(&format!("{name}.bias"), (1, out), Init::Zeros)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    fn declare(src: &mut ParamSource, name: &str, dim: usize) -> Result<LayerNorm, ModelError> {
        Ok(LayerNorm {
            gamma: src.get(&format!("{name}.gamma"), (1, dim), Init::Ones)?,
            beta: src.get(&format!("{name}.beta"), (1, dim), Init::Zeros)?,
        })
    }

    fn apply(&self, g: &mut Graph, x: Var, eps: f64) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, eps)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    attn_ln: LayerNorm,
    ffn_in: Dense,
    ffn_out: Dense,
    ffn_ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    word: ParamId,
    position: ParamId,
    embed_ln: LayerNorm,
    layers: Vec<Layer>,
}

pub struct EncoderOutput {
    /// One row per token.
    pub tokens: Var,
    /// Final hidden state of the first boundary token, 1×hidden.
    pub pooled: Var,
}

/// Inverted dropout with a fresh mask from `rng`; identity when `rng` is
/// absent or `p` is zero.
pub fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = g.value(x).mapv(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
    g.mul_const(x, mask)
}

impl Encoder {
    pub fn declare(cfg: &EncoderConfig, src: &mut ParamSource) -> Result<Encoder, ModelError> {
        cfg.validate()?;
        let h = cfg.hidden;
        let word = src.get("encoder.embeddings.word", (cfg.vocab_size, h), Init::Normal)?;
        let position = src.get("encoder.embeddings.position", (cfg.max_len, h), Init::Normal)?;
        let embed_ln = LayerNorm::declare(src, "encoder.embeddings.ln", h)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("encoder.layer{l}");
            layers.push(Layer {
                q: Dense::declare(src, &format!("{p}.attn.query"), h, h)?,
                k: Dense::declare(src, &format!("{p}.attn.key"), h, h)?,
                v: Dense::declare(src, &format!("{p}.attn.value"), h, h)?,
                o: Dense::declare(src, &format!("{p}.attn.output"), h, h)?,
                attn_ln: LayerNorm::declare(src, &format!("{p}.attn.ln"), h)?,
                ffn_in: Dense::declare(src, &format!("{p}.ffn.in"), h, cfg.intermediate)?,
                ffn_out: Dense::declare(src, &format!("{p}.ffn.out"), cfg.intermediate, h)?,
                ffn_ln: LayerNorm::declare(src, &format!("{p}.ffn.ln"), h)?,
            });
        }
        Ok(Encoder { cfg: cfg.clone(), word, position, embed_ln, layers })
    }

    /// Runs the encoder. Passing an rng enables dropout (training mode).
    pub fn forward(
        &self,
        g: &mut Graph,
        enc: &TokenEncoding,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOutput, ModelError> {
        let cfg = &self.cfg;
        let n = enc.len();
        if n == 0 || n > cfg.max_len {
            return Err(ModelError::InvalidInput(format!("encoding length {n} outside 1..={}", cfg.max_len)));
        }
        let ids: Vec<usize> = enc.ids.iter().map(|&i| i as usize).collect();
        if let Some(bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(ModelError::InvalidInput(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let p = cfg.dropout;
        let eps = cfg.layer_norm_eps;
        let word = g.param(self.word);
        let pos_table = g.param(self.position);
        let x = g.gather(word, &ids);
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather(pos_table, &positions);
        let x = g.add(x, pos);
        let x = self.embed_ln.apply(g, x, eps);
        let mut x = dropout(g, x, p, rng.as_deref_mut());

        let mask = (0..n).any(|i| !enc.attends(i)).then(|| {
            let row = Mat::from_shape_fn((1, n), |(_, j)| if enc.attends(j) { 0.0 } else { f64::NEG_INFINITY });
            g.constant(row)
        });
        let d = cfg.hidden / cfg.heads;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        for layer in &self.layers {
            let q = layer.q.apply(g, x);
            let k = layer.k.apply(g, x);
            let v = layer.v.apply(g, x);
            let mut ctx = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let qh = g.slice_cols(q, h * d, (h + 1) * d);
                let kh = g.slice_cols(k, h * d, (h + 1) * d);
                let vh = g.slice_cols(v, h * d, (h + 1) * d);
                let s = g.matmul_t(qh, kh);
                let mut s = g.scale(s, inv_sqrt_d);
                if let Some(m) = mask {
                    s = g.add_row(s, m);
                }
                let probs = g.softmax(s);
                let probs = dropout(g, probs, p, rng.as_deref_mut());
                ctx.push(g.matmul(probs, vh));
            }
            let ctx = g.concat_cols(&ctx);
            let a = layer.o.apply(g, ctx);
            let a = dropout(g, a, p, rng.as_deref_mut());
            let a = g.add(a, x);
            x = layer.attn_ln.apply(g, a, eps);
            let f = layer.ffn_in.apply(g, x);
            let f = g.gelu(f);
            let f = layer.ffn_out.apply(g, f);
            let f = dropout(g, f, p, rng.as_deref_mut());
            let f = g.add(f, x);
            x = layer.ffn_ln.apply(g, f, eps);
        }
        let pooled = g.select_rows(x, &[0]);
        Ok(EncoderOutput { tokens: x, pooled })
    }
}
