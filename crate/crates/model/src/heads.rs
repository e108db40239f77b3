//! Token tagger, sentence classifier and span extractor on top of the
//! encoder.

use std::fmt;
use std::str::FromStr;

use factorspan_core::builder::{decode_span_chars, AlignedExample, TokenEncoding};
use factorspan_core::evaluator::{PredictedSpan, Prediction, ScoredLabel};
use factorspan_core::schema::{Label, Schema};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softmax_rows, Graph, Mat, ParamStore, Var};
use crate::encoder::{dropout, Dense, Encoder, EncoderConfig, ParamSource};
use crate::nms::nms_decode;
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Token,
    Sentence,
    Span,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Token, ModelKind::Sentence, ModelKind::Span];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Token => "token",
            ModelKind::Sentence => "sentence",
            ModelKind::Span => "span",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::InvalidInput(format!("unknown model kind {s:?}; expected token, sentence or span")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub start: f64,
    pub end: f64,
    pub count: f64,
    pub label: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { start: 1.0, end: 1.0, count: 1.0, label: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Largest span count the count head can predict.
    pub n_max: usize,
    pub loss_weights: LossWeights,
    /// Sentence model: labels with probability above this are predicted.
    pub threshold: f64,
    /// Probabilities are clamped to [eps, 1 − eps] inside the pooled-label loss.
    pub bce_eps: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { n_max: 8, loss_weights: LossWeights::default(), threshold: 0.5, bce_eps: 1e-7 }
    }
}

/// A labelled token range, end exclusive, in encoding positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePrediction {
    /// Labels above the threshold, or the sentinel alone.
    pub labels: Vec<Label>,
    pub probabilities: Vec<(Label, f64)>,
}

/// Quantities computed by the span model during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanModelOutput {
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    pub count_logits: Vec<f64>,
    /// Decoded spans in content-token positions.
    pub spans: Vec<(usize, usize)>,
    pub label_distributions: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    /// For each label, the span whose distribution won the max-pool.
    pub pool_winners: Vec<usize>,
}

impl SpanModelOutput {
    /// The discrete choices made in this pass.
    pub fn selection(&self) -> SpanSelection {
        SpanSelection { spans: self.spans.clone(), pool_winners: self.pool_winners.clone() }
    }
}

/// Decoded spans and max-pool winners of a span-model pass. Holding them
/// fixed makes the loss smooth around the current parameters, which
/// finite-difference checks rely on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanSelection {
    pub spans: Vec<(usize, usize)>,
    pub pool_winners: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub start: f64,
    pub end: f64,
    pub count: f64,
    pub label: f64,
}

/// Maximal runs of one label; sentinel runs produce nothing.
/// Returns `(start, end, label)` with `end` exclusive.
pub fn decode_runs(labels: &[usize], sentinel: usize) -> Vec<(usize, usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i + 1;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        if labels[i] != sentinel {
            runs.push((i, j, labels[i]));
        }
        i = j;
    }
    runs
}

/// Replaces the label of every span whose confidence is not above `tau`
/// with the sentinel.
pub fn apply_confidence_threshold(spans: Vec<SpanPrediction>, tau: f64) -> Vec<SpanPrediction> {
    spans
        .into_iter()
        .map(|mut s| {
            if s.confidence <= tau {
                s.label = Label::NoAnnotation;
            }
            s
        })
        .collect()
}

/// Applies [`apply_confidence_threshold`]'s rule to a sentence prediction.
pub fn threshold_prediction(p: &Prediction, tau: f64) -> Prediction {
    let mut out = p.clone();
    out.labels.retain(|l| l.confidence > tau);
    out.spans.retain(|s| s.confidence > tau);
    out
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
enum Head {
    Token { classifier: Dense },
    Sentence { classifier: Dense },
    Span { start: Dense, end: Dense, count: Dense, label: Dense },
}

/// Encoder plus one head; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub encoder: Encoder,
    pub head_cfg: HeadConfig,
    labels: Vec<Label>,
    sentinel: usize,
    head: Head,
}

/// What a model says about one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput {
    pub labels: Vec<ScoredLabel>,
    pub spans: Vec<SpanPrediction>,
}

impl RawOutput {
    /// Converts token positions to char offsets for evaluation and export.
    pub fn to_prediction(&self, key: impl Into<String>, encoding: &TokenEncoding) -> Prediction {
        let spans = self
            .spans
            .iter()
            .filter_map(|s| {
                let (start, end) = decode_span_chars(encoding, s.start, s.end)?;
                Some(PredictedSpan { start, end, label: s.label, confidence: s.confidence })
            })
            .collect();
        Prediction { key: key.into(), labels: self.labels.clone(), spans }
    }
}

impl Model {
    pub fn declare(
        kind: ModelKind,
        enc_cfg: &EncoderConfig,
        head_cfg: &HeadConfig,
        schema: &Schema,
        src: &mut ParamSource,
    ) -> Result<Model, ModelError> {
        let encoder = Encoder::declare(enc_cfg, src)?;
        let h = enc_cfg.hidden;
        let c = schema.len();
        let head = match kind {
            ModelKind::Token => Head::Token { classifier: Dense::declare(src, "head.token", h, c)? },
            ModelKind::Sentence => Head::Sentence { classifier: Dense::declare(src, "head.sentence", h, c)? },
            ModelKind::Span => Head::Span {
                start: Dense::declare(src, "head.span.start", h, 1)?,
                end: Dense::declare(src, "head.span.end", h, 1)?,
                count: Dense::declare(src, "head.span.count", h, head_cfg.n_max + 1)?,
                label: Dense::declare(src, "head.span.label", h, c)?,
            },
        };
        let sentinel = schema.index_of(Label::NoAnnotation).expect("sentinel in label space");
        Ok(Model { kind, encoder, head_cfg: head_cfg.clone(), labels: schema.labels().to_vec(), sentinel, head })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Scalar training loss for one example. An rng enables dropout.
    pub fn loss(
        &self,
        g: &mut Graph,
        ex: &AlignedExample,
        class_weights: Option<&[f64]>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, LossParts), ModelError> {
        self.loss_with_selection(g, ex, class_weights, rng, None)
    }

    /// Like [`Model::loss`], but the span model reuses `selection` instead of
    /// decoding spans and choosing max-pool winners itself.
    pub fn loss_with_selection(
        &self,
        g: &mut Graph,
        ex: &AlignedExample,
        class_weights: Option<&[f64]>,
        mut rng: Option<&mut ChaCha8Rng>,
        selection: Option<&SpanSelection>,
    ) -> Result<(Var, LossParts), ModelError> {
        let enc = &ex.encoding;
        let out = self.encoder.forward(g, enc, rng.as_deref_mut())?;
        let p = self.encoder.cfg.dropout;
        let c = self.labels.len();
        match &self.head {
            Head::Token { classifier } => {
                let content = enc.content_positions();
                if content.is_empty() {
                    let zero = g.constant(Mat::zeros((1, 1)));
                    return Ok((zero, LossParts::default()));
                }
                let x = g.select_rows(out.tokens, &content);
                let x = dropout(g, x, p, rng);
                let logits = classifier.apply(g, x);
                let targets: Vec<Option<usize>> = content.iter().map(|&i| ex.token_labels[i]).collect();
                let loss = g.softmax_ce(logits, &targets, class_weights.map(<[f64]>::to_vec));
                let v = g.scalar(loss);
                Ok((loss, LossParts { total: v, label: v, ..LossParts::default() }))
            }
            Head::Sentence { classifier } => {
                let x = dropout(g, out.pooled, p, rng);
                let logits = classifier.apply(g, x);
                let targets = Array2::from_shape_vec((1, c), ex.multilabel.clone()).expect("label vector length");
                let weights = class_weights.map(|w| Array2::from_shape_vec((1, c), w.to_vec()).expect("weight length"));
                let loss = g.bce_with_logits(logits, targets, weights, c as f64);
                let v = g.scalar(loss);
                Ok((loss, LossParts { total: v, label: v, ..LossParts::default() }))
            }
            Head::Span { .. } => {
                let (loss, parts, _) = self.span_training(g, ex, out.tokens, out.pooled, class_weights, rng, selection)?;
                Ok((loss, parts))
            }
        }
    }

    /// Span model training pass: boundary, count and pooled-label losses.
    pub fn span_training_output(
        &self,
        g: &mut Graph,
        ex: &AlignedExample,
        class_weights: Option<&[f64]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, LossParts, SpanModelOutput), ModelError> {
        let out = self.encoder.forward(g, &ex.encoding, rng.as_deref_mut())?;
        self.span_training(g, ex, out.tokens, out.pooled, class_weights, rng, None)
    }

    fn span_training(
        &self,
        g: &mut Graph,
        ex: &AlignedExample,
        tokens: Var,
        pooled: Var,
        class_weights: Option<&[f64]>,
        mut rng: Option<&mut ChaCha8Rng>,
        frozen: Option<&SpanSelection>,
    ) -> Result<(Var, LossParts, SpanModelOutput), ModelError> {
        let Head::Span { start, end, count, label } = &self.head else {
            return Err(ModelError::InvalidInput(format!("{} model has no span head", self.kind)));
        };
        let cfg = &self.head_cfg;
        let p = self.encoder.cfg.dropout;
        let c = self.labels.len();
        let enc = &ex.encoding;
        let content = enc.content_positions();
        let lc = content.len();

        let pooled = dropout(g, pooled, p, rng.as_deref_mut());
        let count_logits = count.apply(g, pooled);
        let mut gold_n = ex.span_count;
        if gold_n > cfg.n_max {
            log::warn!("gold span count {gold_n} clamped to {}", cfg.n_max);
            gold_n = cfg.n_max;
        }
        let count_loss = g.softmax_ce(count_logits, &[Some(gold_n)], None);
        let count_values: Vec<f64> = g.value(count_logits).iter().copied().collect();

        let targets = Array2::from_shape_vec((1, c), ex.multilabel.clone()).expect("label vector length");
        let weights = class_weights.map(|w| Array2::from_shape_vec((1, c), w.to_vec()).expect("weight length"));

        let mut output = SpanModelOutput {
            start_probs: Vec::new(),
            end_probs: Vec::new(),
            count_logits: count_values.clone(),
            spans: Vec::new(),
            label_distributions: Vec::new(),
            pooled: vec![0.0; c],
            pool_winners: Vec::new(),
        };
        let mut terms = vec![(count_loss, cfg.loss_weights.count)];
        let mut parts = LossParts { count: g.scalar(count_loss), ..LossParts::default() };

        if lc > 0 {
            let x = g.select_rows(tokens, &content);
            let x = dropout(g, x, p, rng);
            let position_of = |t: usize| content.iter().position(|&c| c == t);
            let mut start_t = Mat::zeros((lc, 1));
            let mut end_t = Mat::zeros((lc, 1));
            for (s, e) in ex.distinct_extents() {
                if let (Some(ps), Some(pe)) = (position_of(s), position_of(e - 1)) {
                    start_t[[ps, 0]] = 1.0;
                    end_t[[pe, 0]] = 1.0;
                }
            }
            let start_logits = start.apply(g, x);
            let end_logits = end.apply(g, x);
            let start_loss = g.bce_with_logits(start_logits, start_t, None, lc as f64);
            let end_loss = g.bce_with_logits(end_logits, end_t, None, lc as f64);
            output.start_probs = g.value(start_logits).iter().map(|&z| sigmoid(z)).collect();
            output.end_probs = g.value(end_logits).iter().map(|&z| sigmoid(z)).collect();
            parts.start = g.scalar(start_loss);
            parts.end = g.scalar(end_loss);
            terms.push((start_loss, cfg.loss_weights.start));
            terms.push((end_loss, cfg.loss_weights.end));

            output.spans = match frozen {
                Some(sel) => sel.spans.clone(),
                None => nms_decode(&output.start_probs, &output.end_probs, argmax(&count_values)),
            };
            let mut dists = Vec::with_capacity(output.spans.len());
            for &(s, e) in &output.spans {
                let m = g.mean_rows(x, s, e);
                let logits = label.apply(g, m);
                dists.push(g.softmax(logits));
            }
            let pooled_labels = if dists.is_empty() {
                g.constant(self.empty_pool(ex))
            } else {
                let all = g.concat_rows(&dists);
                output.label_distributions = g.value(all).rows().into_iter().map(|r| r.to_vec()).collect();
                let pooled = match frozen {
                    Some(sel) => g.pick_rows(all, &sel.pool_winners),
                    None => g.max_rows(all),
                };
                let values = g.value(pooled);
                output.pool_winners = (0..c)
                    .map(|j| output.label_distributions.iter().position(|d| d[j] == values[[0, j]]).unwrap_or(0))
                    .collect();
                pooled
            };
            output.pooled = g.value(pooled_labels).iter().copied().collect();
            let label_loss = g.bce(pooled_labels, targets, weights, c as f64, cfg.bce_eps);
            parts.label = g.scalar(label_loss);
            terms.push((label_loss, cfg.loss_weights.label));
        } else {
            let empty = g.constant(self.empty_pool(ex));
            output.pooled = g.value(empty).iter().copied().collect();
            let label_loss = g.bce(empty, targets, weights, c as f64, cfg.bce_eps);
            parts.label = g.scalar(label_loss);
            terms.push((label_loss, cfg.loss_weights.label));
        }
        let total = g.weighted_sum(&terms);
        parts.total = g.scalar(total);
        Ok((total, parts, output))
    }

    /// Pooled label vector when no span was predicted: zeros, except that a
    /// sentence whose gold is the sentinel alone gets the sentinel, since
    /// predicting no span means predicting no annotation.
    fn empty_pool(&self, ex: &AlignedExample) -> Mat {
        let mut m = Mat::zeros((1, self.labels.len()));
        let gold_sentinel_only = ex.multilabel.iter().enumerate().all(|(j, &y)| (y > 0.0) == (j == self.sentinel));
        if gold_sentinel_only {
            m[[0, self.sentinel]] = 1.0;
        }
        m
    }

    /// Eval-mode prediction for one encoding.
    pub fn predict(&self, store: &ParamStore, enc: &TokenEncoding) -> Result<RawOutput, ModelError> {
        let mut g = Graph::new(store);
        let out = self.encoder.forward(&mut g, enc, None)?;
        let content = enc.content_positions();
        match &self.head {
            Head::Token { classifier } => {
                if content.is_empty() {
                    return Ok(RawOutput { labels: Vec::new(), spans: Vec::new() });
                }
                let x = g.select_rows(out.tokens, &content);
                let logits = classifier.apply(&mut g, x);
                let probs = softmax_rows(g.value(logits));
                let tags: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect();
                let spans: Vec<SpanPrediction> = decode_runs(&tags, self.sentinel)
                    .into_iter()
                    .map(|(s, e, l)| {
                        let confidence = (s..e).map(|i| probs[[i, l]]).sum::<f64>() / (e - s) as f64;
                        SpanPrediction { start: content[s], end: content[e - 1] + 1, label: self.labels[l], confidence }
                    })
                    .collect();
                Ok(RawOutput { labels: labels_from_spans(&spans), spans })
            }
            Head::Sentence { .. } => {
                let s = self.classify(&mut g, out.pooled);
                let labels = s
                    .probabilities
                    .iter()
                    .filter(|(l, p)| !l.is_sentinel() && *p > self.head_cfg.threshold)
                    .map(|&(label, confidence)| ScoredLabel { label, confidence })
                    .collect();
                Ok(RawOutput { labels, spans: Vec::new() })
            }
            Head::Span { start, end, count, label } => {
                let count_logits = count.apply(&mut g, out.pooled);
                let n = argmax(g.value(count_logits).as_slice().unwrap());
                if n == 0 || content.is_empty() {
                    return Ok(RawOutput { labels: Vec::new(), spans: Vec::new() });
                }
                let x = g.select_rows(out.tokens, &content);
                let sl = start.apply(&mut g, x);
                let el = end.apply(&mut g, x);
                let sp: Vec<f64> = g.value(sl).iter().map(|&z| sigmoid(z)).collect();
                let ep: Vec<f64> = g.value(el).iter().map(|&z| sigmoid(z)).collect();
                let mut spans = Vec::new();
                for (s, e) in nms_decode(&sp, &ep, n) {
                    let m = g.mean_rows(x, s, e);
                    let logits = label.apply(&mut g, m);
                    let dist = softmax_rows(g.value(logits));
                    let best = argmax(dist.as_slice().unwrap());
                    if best != self.sentinel {
                        spans.push(SpanPrediction {
                            start: content[s],
                            end: content[e - 1] + 1,
                            label: self.labels[best],
                            confidence: dist[[0, best]],
                        });
                    }
                }
                Ok(RawOutput { labels: labels_from_spans(&spans), spans })
            }
        }
    }

    /// Per-label probabilities of the sentence model.
    pub fn sentence_classify(&self, store: &ParamStore, enc: &TokenEncoding, tau: f64) -> Result<SentencePrediction, ModelError> {
        if !matches!(self.head, Head::Sentence { .. }) {
            return Err(ModelError::InvalidInput(format!("{} model has no sentence head", self.kind)));
        }
        let mut g = Graph::new(store);
        let out = self.encoder.forward(&mut g, enc, None)?;
        let mut s = self.classify(&mut g, out.pooled);
        s.labels = s.probabilities.iter().filter(|(l, p)| !l.is_sentinel() && *p > tau).map(|(l, _)| *l).collect();
        if s.labels.is_empty() {
            s.labels.push(Label::NoAnnotation);
        }
        Ok(s)
    }

    fn classify(&self, g: &mut Graph, pooled: Var) -> SentencePrediction {
        let Head::Sentence { classifier } = &self.head else { unreachable!() };
        let logits = classifier.apply(g, pooled);
        let probabilities: Vec<(Label, f64)> =
            self.labels.iter().zip(g.value(logits).iter()).map(|(l, &z)| (*l, sigmoid(z))).collect();
        let labels = probabilities.iter().filter(|(_, p)| *p > self.head_cfg.threshold).map(|(l, _)| *l).collect();
        SentencePrediction { labels, probabilities }
    }

    /// Span predictions for one encoding (span and token models).
    pub fn span_predict(&self, store: &ParamStore, enc: &TokenEncoding) -> Result<Vec<SpanPrediction>, ModelError> {
        Ok(self.predict(store, enc)?.spans)
    }
}

/// Highest span confidence per label.
fn labels_from_spans(spans: &[SpanPrediction]) -> Vec<ScoredLabel> {
    let mut out: Vec<ScoredLabel> = Vec::new();
    for s in spans {
        match out.iter_mut().find(|l| l.label == s.label) {
            Some(l) => l.confidence = l.confidence.max(s.confidence),
            None => out.push(ScoredLabel { label: s.label, confidence: s.confidence }),
        }
    }
    out
}
