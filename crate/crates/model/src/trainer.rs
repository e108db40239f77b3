//! Deterministic mini-batch training.
//!
//! Randomness is derived from the seed and the position in training (epoch
//! for the shuffle, step and example for dropout), so a run resumed from a
//! checkpoint continues exactly as the uninterrupted run would.

use std::path::PathBuf;

use factorspan_core::builder::{align, class_weights, AlignedExample, Tokenizer, WeightScheme};
use factorspan_core::corpus::{sentence_label_counts, AnnotatedSentence};
use factorspan_core::evaluator::{evaluate, EvalConfig, EvalReport, Prediction};
use factorspan_core::schema::{Schema, SchemaVersion};
use factorspan_core::text::derive_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, Graph, ParamStore};
use crate::checkpoint::{Checkpoint, CheckpointMeta, OptimizerState, FORMAT_VERSION};
use crate::encoder::{EncoderConfig, ParamSource};
use crate::heads::{HeadConfig, Model, ModelKind};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrained::Pretrained;
use crate::tokenizer::WordPiece;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Defaults by model: span 4, token 5, sentence 7.
    pub epochs: Option<usize>,
    /// Defaults by model: LOG for span and token, NONE for sentence.
    pub weight_scheme: Option<WeightScheme>,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(ModelKind::Span)
    }
}

impl TrainConfig {
    pub fn new(model: ModelKind) -> TrainConfig {
        TrainConfig {
            model,
            batch_size: 16,
            lr: 3e-5,
            dropout: 0.1,
            weight_decay: 0.001,
            epochs: None,
            weight_scheme: None,
            seed: 0,
            clip_norm: Some(1.0),
            head: HeadConfig::default(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.model {
            ModelKind::Span => 4,
            ModelKind::Token => 5,
            ModelKind::Sentence => 7,
        })
    }

    pub fn weight_scheme(&self) -> WeightScheme {
        self.weight_scheme.unwrap_or(match self.model {
            ModelKind::Sentence => WeightScheme::None,
            ModelKind::Span | ModelKind::Token => WeightScheme::Log,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, clip_norm: self.clip_norm, ..AdamWConfig::default() }
    }
}

/// Sentences with their token alignments.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sentences: Vec<AnnotatedSentence>,
    pub examples: Vec<AlignedExample>,
}

impl Dataset {
    pub fn new(sentences: Vec<AnnotatedSentence>, tokenizer: &dyn Tokenizer, schema: &Schema) -> Dataset {
        let examples = sentences.iter().map(|s| align(s, tokenizer, schema)).collect();
        Dataset { sentences, examples }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A freshly initialised model around `tokenizer`.
pub fn init_checkpoint(
    kind: ModelKind,
    encoder: &EncoderConfig,
    head: &HeadConfig,
    schema_version: SchemaVersion,
    tokenizer: WordPiece,
    seed: u64,
) -> Result<Checkpoint, ModelError> {
    let mut store = ParamStore::new();
    let mut rng = derive_rng(seed, &["init", kind.as_str()]);
    let schema = Schema::new(schema_version);
    let model = Model::declare(kind, encoder, head, &schema, &mut ParamSource::Create { store: &mut store, rng: &mut rng })?;
    Ok(Checkpoint { meta: fresh_meta(kind, encoder, head, schema_version), tokenizer, store, model, optimizer: None })
}

/// Pretrained encoder weights with freshly initialised heads.
pub fn init_from_pretrained(
    kind: ModelKind,
    pretrained: Pretrained,
    head: &HeadConfig,
    schema_version: SchemaVersion,
    seed: u64,
) -> Result<Checkpoint, ModelError> {
    let Pretrained { config, tokenizer, mut tensors } = pretrained;
    let mut store = ParamStore::new();
    let mut rng = derive_rng(seed, &["init", kind.as_str()]);
    let schema = Schema::new(schema_version);
    let model = Model::declare(
        kind,
        &config,
        head,
        &schema,
        &mut ParamSource::Warm { store: &mut store, rng: &mut rng, values: &mut tensors },
    )?;
    Ok(Checkpoint { meta: fresh_meta(kind, &config, head, schema_version), tokenizer, store, model, optimizer: None })
}

fn fresh_meta(kind: ModelKind, encoder: &EncoderConfig, head: &HeadConfig, schema_version: SchemaVersion) -> CheckpointMeta {
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind,
        encoder: encoder.clone(),
        head: head.clone(),
        schema_version,
        epoch: 0,
        step: 0,
        dev_history: Vec::new(),
        train_config: None,
        config_hash: None,
    }
}

/// Eval-mode predictions with char offsets.
pub fn predict_dataset(model: &Model, store: &ParamStore, data: &Dataset) -> Result<Vec<Prediction>, ModelError> {
    data.sentences
        .iter()
        .zip(&data.examples)
        .map(|(s, ex)| Ok(model.predict(store, &ex.encoding)?.to_prediction(s.key(), &ex.encoding)))
        .collect()
}

pub fn evaluate_dataset(model: &Model, store: &ParamStore, data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport, ModelError> {
    let preds = predict_dataset(model, store, data)?;
    Ok(evaluate(&preds, &data.sentences, cfg)?)
}

/// Class weights over the label space from sentence-level label counts.
pub fn class_weight_vector(train: &[AnnotatedSentence], schema: &Schema, scheme: WeightScheme) -> Result<Option<Vec<f64>>, ModelError> {
    if scheme == WeightScheme::None {
        return Ok(None);
    }
    let w = class_weights(&sentence_label_counts(train), schema.labels(), scheme)?;
    Ok(Some(w.vector(schema.labels())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// 1-based epoch the step belongs to.
    pub epoch: usize,
    pub loss: f64,
    /// Dev macro-F1, set on the last step of an epoch.
    pub dev_f1: Option<f64>,
}

pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Option<Checkpoint>,
    pub records: Vec<StepRecord>,
}

pub struct Trainer<'d> {
    ckpt: Checkpoint,
    opt: AdamW,
    cfg: TrainConfig,
    weights: Option<Vec<f64>>,
    grads: GradStore,
    train: &'d Dataset,
    dev: Option<&'d Dataset>,
    best: Option<(f64, Checkpoint)>,
    records: Vec<StepRecord>,
    order: Option<(usize, Vec<usize>)>,
    dump_dir: PathBuf,
}

impl<'d> Trainer<'d> {
    /// Starts from `ckpt`, resuming if it carries optimizer state.
    pub fn new(mut ckpt: Checkpoint, cfg: TrainConfig, train: &'d Dataset, dev: Option<&'d Dataset>) -> Result<Trainer<'d>, ModelError> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(ModelError::InvalidInput("training set is empty".into()));
        }
        if ckpt.meta.kind != cfg.model {
            return Err(ModelError::InvalidInput(format!("checkpoint holds a {} model, config asks for {}", ckpt.meta.kind, cfg.model)));
        }
        ckpt.meta.encoder.dropout = cfg.dropout;
        ckpt.model.encoder.cfg.dropout = cfg.dropout;
        ckpt.meta.train_config = Some(serde_json::to_value(&cfg)?);
        let opt = match ckpt.optimizer.take() {
            Some(state) => state.into_adamw(),
            None => AdamW::new(cfg.adamw(), &ckpt.store),
        };
        let weights = class_weight_vector(&train.sentences, &ckpt.schema(), cfg.weight_scheme())?;
        let grads = GradStore::new(&ckpt.store);
        Ok(Trainer {
            ckpt,
            opt,
            cfg,
            weights,
            grads,
            train,
            dev,
            best: None,
            records: Vec::new(),
            order: None,
            dump_dir: std::env::temp_dir(),
        })
    }

    /// Where a failing batch is written when the loss is not finite.
    pub fn set_dump_dir(&mut self, dir: PathBuf) {
        self.dump_dir = dir;
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.cfg.epochs()
    }

    pub fn step(&self) -> usize {
        self.ckpt.meta.step
    }

    pub fn class_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut derive_rng(self.cfg.seed, &["shuffle", &epoch.to_string()]));
            self.order = Some((epoch, order));
        }
        &self.order.as_ref().unwrap().1
    }

    /// Trains until the configured epochs are done or `stop_at` steps have
    /// been taken, calling `on_step` after every optimizer step.
    pub fn run(&mut self, stop_at: Option<usize>, on_step: &mut dyn FnMut(&StepRecord)) -> Result<(), ModelError> {
        let spe = self.steps_per_epoch();
        let total = self.total_steps();
        let bs = self.cfg.batch_size;
        while self.step() < total && stop_at.is_none_or(|s| self.step() < s) {
            let step = self.step();
            let epoch = step / spe;
            let b = step % spe;
            let batch: Vec<usize> = {
                let order = self.epoch_order(epoch);
                order[b * bs..((b + 1) * bs).min(order.len())].to_vec()
            };
            let loss = self.train_batch(step, &batch)?;
            self.ckpt.meta.step = step + 1;
            let mut record = StepRecord { step: step + 1, epoch: epoch + 1, loss, dev_f1: None };
            if (step + 1) % spe == 0 {
                self.ckpt.meta.epoch = epoch + 1;
                if let Some(dev) = self.dev {
                    let cfg = EvalConfig { schema_version: self.ckpt.meta.schema_version, ..EvalConfig::default() };
                    let f1 = evaluate_dataset(&self.ckpt.model, &self.ckpt.store, dev, &cfg)?.macro_f1();
                    self.ckpt.meta.dev_history.push(f1);
                    record.dev_f1 = Some(f1);
                    log::info!("epoch {} dev macro-F1 {f1:.4}", epoch + 1);
                    if self.best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                        let mut best = self.ckpt.clone();
                        best.optimizer = None;
                        self.best = Some((f1, best));
                    }
                }
            }
            on_step(&record);
            self.records.push(record);
        }
        Ok(())
    }

    fn train_batch(&mut self, step: usize, batch: &[usize]) -> Result<f64, ModelError> {
        self.grads.zero();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &i in batch {
            let mut rng = derive_rng(self.cfg.seed, &["dropout", &step.to_string(), &i.to_string()]);
            let ex = &self.train.examples[i];
            let mut g = Graph::new(&self.ckpt.store);
            let (loss, _) = self.ckpt.model.loss(&mut g, ex, self.weights.as_deref(), Some(&mut rng))?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(self.dump(step, batch, value));
            }
            g.backward(loss, &mut self.grads, scale);
            total += value;
        }
        let norm = self.opt.step(&mut self.ckpt.store, &self.grads);
        if !norm.is_finite() {
            return Err(self.dump(step, batch, norm));
        }
        Ok(total * scale)
    }

    fn dump(&self, step: usize, batch: &[usize], loss: f64) -> ModelError {
        let sentences: Vec<&AnnotatedSentence> = batch.iter().map(|&i| &self.train.sentences[i]).collect();
        let path = self.dump_dir.join(format!("nonfinite_step{step}.json"));
        let body = serde_json::json!({ "step": step, "loss": loss.to_string(), "batch": sentences });
        let written = std::fs::create_dir_all(&self.dump_dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap_or_default()));
        let dump = match written {
            Ok(()) => path.display().to_string(),
            Err(e) => format!("(dump failed: {e})"),
        };
        ModelError::NonFinite { step, loss, dump }
    }

    /// Current state including optimizer moments, for resuming.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = self.ckpt.clone();
        c.optimizer = Some(OptimizerState::from_adamw(&self.opt));
        c
    }

    /// Best dev checkpoint so far, with its macro-F1.
    pub fn best(&self) -> Option<(f64, &Checkpoint)> {
        self.best.as_ref().map(|(f, c)| (*f, c))
    }

    /// Restores the best-so-far checkpoint of an interrupted run.
    pub fn set_best(&mut self, f1: f64, mut ckpt: Checkpoint) {
        ckpt.optimizer = None;
        self.best = Some((f1, ckpt));
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn finish(self) -> TrainOutcome {
        let mut final_checkpoint = self.ckpt;
        final_checkpoint.optimizer = Some(OptimizerState::from_adamw(&self.opt));
        TrainOutcome { final_checkpoint, best_checkpoint: self.best.map(|(_, c)| c), records: self.records }
    }
}

/// Runs a full training from `init`.
pub fn train(init: Checkpoint, cfg: TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<TrainOutcome, ModelError> {
    let mut t = Trainer::new(init, cfg, train, dev)?;
    t.run(None, &mut |_| {})?;
    Ok(t.finish())
}

