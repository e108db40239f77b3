//! Pipeline stages. Each reads the run config plus earlier artifacts and
//! writes one subdirectory of the run directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use factorspan_core::analytics::{self, AnalyticsConfig};
use factorspan_core::builder::build_dataset;
use factorspan_core::corpus::{read_corpus, write_corpus, AnnotatedSentence, CorpusHeader};
use factorspan_core::evaluator::{self, default_high_confidence_subset, high_confidence_report, EvalReport, Prediction};
use factorspan_core::genclient::{
    generate, read_notes, FixtureProvider, JsonlNoteWriter, LiveProvider, NoteProvider, NotesHeader, PromptKind,
    PromptTemplate,
};
use factorspan_core::parser::parse_notes;
use factorspan_core::schema::{label_space, Schema};
use factorspan_model::checkpoint::Checkpoint;
use factorspan_model::heads::{threshold_prediction, ModelKind};
use factorspan_model::pretrained::load_bert;
use factorspan_model::trainer::{init_checkpoint, init_from_pretrained, predict_dataset, Dataset, StepRecord, Trainer};
use factorspan_model::{load_checkpoint, save_checkpoint, WordPiece};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Criterion, EvalSection, RunConfig};
use crate::error::{CliError, Result};
use crate::stamp::{is_fresh, write_stamp, KeyBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// One run directory and the configuration driving it.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub config_hash: String,
    pub run_dir: PathBuf,
    /// Re-run stages even when their stamps are fresh.
    pub force: bool,
}

fn write_json(path: &Path, config_hash: &str, value: &impl Serialize) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    let v = match &mut v {
        Value::Object(m) => {
            m.insert("config_hash".into(), json!(config_hash));
            v
        }
        _ => json!({ "config_hash": config_hash, "data": v }),
    };
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(path: &Path, config_hash: &str, body: &str) -> Result<()> {
    std::fs::write(path, format!("# config_hash: {config_hash}\n{body}")).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct JsonlWriter {
    inner: BufWriter<File>,
}

impl JsonlWriter {
    fn create(path: &Path, format: &str, config_hash: &str) -> Result<JsonlWriter> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = JsonlWriter { inner: BufWriter::new(file) };
        w.row(&json!({ "format": format, "config_hash": config_hash }))?;
        Ok(w)
    }

    fn row(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Rows of a JSONL file written by [`JsonlWriter`], without the header.
pub fn read_jsonl_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(rows)
}

pub const METRICS_FORMAT: &str = "factorspan.metrics.v1";
pub const PREDICTIONS_FORMAT: &str = "factorspan.predictions.v1";
pub const EXTRACTIONS_FORMAT: &str = "factorspan.extractions.v1";

/// What the train stage leaves behind besides checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub steps: usize,
    pub epochs: usize,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub dev_history: Vec<f64>,
    pub best_dev_f1: Option<f64>,
    pub parameters: usize,
    pub resumed_from_step: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    key: String,
    step: usize,
}

/// Reports written by the evaluate stage.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub baseline: EvalReport,
    pub high_confidence: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedSpan {
    pub start_char: usize,
    pub end_char: usize,
    pub label: factorspan_core::Label,
    pub confidence: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub id: String,
    pub text: String,
    pub labels: Vec<factorspan_core::evaluator::ScoredLabel>,
    pub spans: Vec<ExtractedSpan>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Pipeline {
        let config_hash = cfg.hash();
        let run_dir = cfg.paths.workspace.join(&cfg.run_id);
        Pipeline { cfg, config_hash, run_dir, force: false }
    }

    pub fn with_force(mut self, force: bool) -> Pipeline {
        self.force = force;
        self
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join(stage)
    }

    fn make_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(())
    }

    fn require(&self, stage: &str, path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Upstream { stage: stage.to_string(), path })
        }
    }

    fn fresh(&self, dir: &Path, name: &str, key: &str) -> bool {
        let fresh = !self.force && is_fresh(dir, name, key);
        if fresh {
            log::info!("{name}: up to date");
        }
        fresh
    }

    pub fn checkpoint_dir_for(&self, kind: ModelKind) -> PathBuf {
        match &self.cfg.paths.checkpoints {
            Some(dir) => dir.join(&self.cfg.run_id).join(kind.as_str()),
            None => self.stage_dir("train").join(kind.as_str()),
        }
    }

    pub fn notes_path(&self, kind: PromptKind) -> PathBuf {
        self.stage_dir("generate").join(format!("{}.jsonl", kind.as_str()))
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.stage_dir("build").join(format!("{split}.jsonl"))
    }

    pub fn final_checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.checkpoint_dir_for(kind).join("final.safetensors")
    }

    pub fn best_checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.checkpoint_dir_for(kind).join("best.safetensors")
    }

    pub fn metrics_path(&self, kind: ModelKind) -> PathBuf {
        self.stage_dir("train").join(kind.as_str()).join("metrics.jsonl")
    }

    /// Generates `n` records of one prompt kind (all fixture records of that
    /// kind when offline and no count is configured).
    pub fn generate(&self, kind: PromptKind, n: Option<usize>, offline: bool) -> Result<Outcome> {
        let g = &self.cfg.generate;
        let offline = offline || g.offline;
        let dir = self.stage_dir("generate");
        let out = self.notes_path(kind);
        let n = n.or_else(|| g.counts.get(&kind).copied());
        let mut key = KeyBuilder::new("generate");
        key.add("kind", kind.as_str()).add_json("params", &g.params())?;
        let fixture = if offline {
            let path = &self.cfg.paths.fixtures;
            if !path.exists() {
                return Err(CliError::config(format!("fixture file {} does not exist", path.display())));
            }
            key.add("provider", "fixture").add_file(path)?;
            Some(FixtureProvider::load(path)?)
        } else {
            key.add("provider", &g.endpoint);
            None
        };
        let n = match (n, &fixture) {
            (Some(n), _) => n,
            (None, Some(f)) => f.available(kind),
            (None, None) => {
                return Err(CliError::config(format!("no record count configured for {kind}; set [generate.counts] or pass --n")))
            }
        };
        if n == 0 {
            return Err(CliError::config(format!("record count for {kind} must be at least 1")));
        }
        let key = key.add("n", &n.to_string()).finish();
        let stamp = format!("generate-{}", kind.as_str());
        if self.fresh(&dir, &stamp, &key) {
            return Ok(Outcome::UpToDate);
        }
        let provider: Box<dyn NoteProvider> = match fixture {
            Some(f) => Box::new(f),
            None => Box::new(LiveProvider::new(&g.live()).map_err(|e| CliError::config(e.to_string()))?),
        };
        self.make_dir(&dir)?;
        let part = out.with_extension("jsonl.part");
        let mut sink = JsonlNoteWriter::with_header(&part, &NotesHeader::new(kind, Some(self.config_hash.clone())))?;
        let template = PromptTemplate::for_kind(kind);
        match generate(&template, n, &g.params(), provider.as_ref(), &g.options(), &mut sink) {
            Ok(notes) => {
                drop(sink);
                std::fs::rename(&part, &out)?;
                log::info!("generate: {} {kind} record(s) from {} → {}", notes.len(), provider.name(), out.display());
            }
            Err(e) if e.is_auth() => return Err(CliError::config(e.to_string())),
            Err(e) => return Err(CliError::Runtime(anyhow!("generation failed: {e}; partial output in {}", part.display()))),
        }
        write_stamp(&dir, &stamp, &key, &self.config_hash, &[out])?;
        Ok(Outcome::Ran)
    }

    /// Parses standard and negative-only notes into the sentence corpus.
    pub fn parse(&self) -> Result<Outcome> {
        let standard = self.require("generate --prompt-kind standard", self.notes_path(PromptKind::Standard))?;
        let negative = self.notes_path(PromptKind::NegativeOnly);
        let inputs: Vec<PathBuf> = std::iter::once(standard).chain(negative.exists().then_some(negative)).collect();
        let mut key = KeyBuilder::new("parse");
        key.add_json("schema", &self.cfg.schema_version)?;
        for p in &inputs {
            key.add_file(p)?;
        }
        let key = key.finish();
        let dir = self.stage_dir("parse");
        if self.fresh(&dir, "parse", &key) {
            return Ok(Outcome::UpToDate);
        }
        self.make_dir(&dir)?;
        let mut notes = Vec::new();
        for p in &inputs {
            notes.extend(read_notes(p)?);
        }
        let (sentences, report) = parse_notes(&notes, self.cfg.schema_version);
        let corpus = dir.join("sentences.jsonl");
        let schema = Schema::new(self.cfg.schema_version);
        write_corpus(&corpus, &CorpusHeader::new(&schema, Some(self.config_hash.clone())), &sentences)?;
        let report_path = dir.join("report.json");
        write_json(&report_path, &self.config_hash, &report)?;
        log::info!(
            "parse: {} note(s) → {} sentence(s), {} annotation(s) accepted, {} rejected",
            notes.len(),
            sentences.len(),
            report.accepted_total(),
            report.rejected_total()
        );
        write_stamp(&dir, "parse", &key, &self.config_hash, &[corpus, report_path])?;
        Ok(Outcome::Ran)
    }

    /// Diversity statistics of the parsed corpus.
    pub fn analyze(&self) -> Result<Outcome> {
        let corpus = self.require("parse", self.stage_dir("parse").join("sentences.jsonl"))?;
        let a = &self.cfg.analyze;
        let seed = self.cfg.stage_seed(&["analyze"]);
        let mut key = KeyBuilder::new("analyze");
        key.add_file(&corpus)?.add_json("cfg", a)?.add("seed", &seed.to_string());
        let key = key.finish();
        let dir = self.stage_dir("analyze");
        if self.fresh(&dir, "analyze", &key) {
            return Ok(Outcome::UpToDate);
        }
        self.make_dir(&dir)?;
        let (header, sentences) = read_corpus(&corpus)?;
        let cfg = AnalyticsConfig { top_k: a.top_k, pair_budget: a.pair_budget, seed };
        let report = analytics::diversity_report(&sentences, &label_space(header.schema_version), &cfg);
        let json_path = dir.join("diversity.json");
        let text_path = dir.join("diversity.txt");
        write_json(&json_path, &self.config_hash, &report)?;
        write_text(&text_path, &self.config_hash, &analytics::render_report(&report))?;
        log::info!("analyze: {} label(s) with spans", report.labels.len());
        write_stamp(&dir, "analyze", &key, &self.config_hash, &[json_path, text_path])?;
        Ok(Outcome::Ran)
    }

    /// Builds train/dev/test splits, class weights and the tokenizer vocabulary.
    pub fn build(&self) -> Result<Outcome> {
        let corpus = self.require("parse", self.stage_dir("parse").join("sentences.jsonl"))?;
        let no_label = self.notes_path(PromptKind::NoLabelSentences);
        let builder = self.cfg.builder();
        let seed = self.cfg.stage_seed(&["build"]);
        let mut key = KeyBuilder::new("build");
        key.add_file(&corpus)?
            .add_json("builder", &builder)?
            .add_json("tokenizer", &self.cfg.tokenizer)?
            .add("seed", &seed.to_string());
        if no_label.exists() {
            key.add_file(&no_label)?;
        }
        let key = key.finish();
        let dir = self.stage_dir("build");
        if self.fresh(&dir, "build", &key) {
            return Ok(Outcome::UpToDate);
        }
        self.make_dir(&dir)?;
        let (header, sentences) = read_corpus(&corpus)?;
        let extra = if no_label.exists() { Some(read_notes(&no_label)?) } else { None };
        let out = build_dataset(sentences, header.schema_version, extra.as_deref(), &builder, seed)?;
        let schema = Schema::new(builder.schema_version);
        let corpus_header = CorpusHeader::new(&schema, Some(self.config_hash.clone()));
        let mut outputs = Vec::new();
        for (name, part) in [("train", &out.train), ("dev", &out.dev), ("test", &out.test)] {
            let path = self.split_path(name);
            write_corpus(&path, &corpus_header, part)?;
            outputs.push(path);
        }
        for (name, value) in [
            ("manifest.json", serde_json::to_value(&out.manifest)?),
            ("weights.json", serde_json::to_value(&out.weights)?),
            ("stages.json", json!({ "stages": out.reports })),
        ] {
            let path = dir.join(name);
            write_json(&path, &self.config_hash, &value)?;
            outputs.push(path);
        }
        let tokenizer = WordPiece::train(out.train.iter().map(|s| s.text.as_str()), &self.cfg.tokenizer);
        let vocab: Value = serde_json::from_str(&tokenizer.to_json())?;
        let vocab_path = dir.join("wordpiece.json");
        write_json(&vocab_path, &self.config_hash, &json!({ "tokenizer": vocab }))?;
        outputs.push(vocab_path);
        log::info!(
            "build: {} train / {} dev / {} test sentence(s), vocabulary of {}",
            out.train.len(),
            out.dev.len(),
            out.test.len(),
            tokenizer.vocab_size()
        );
        write_stamp(&dir, "build", &key, &self.config_hash, &outputs)?;
        Ok(Outcome::Ran)
    }

    fn load_vocab(&self) -> Result<WordPiece> {
        let path = self.require("build", self.stage_dir("build").join("wordpiece.json"))?;
        let v: Value = serde_json::from_slice(&std::fs::read(&path)?)?;
        let tok = v.get("tokenizer").ok_or_else(|| anyhow!("{}: no tokenizer field", path.display()))?;
        Ok(WordPiece::from_json(&tok.to_string())?)
    }

    fn initial_checkpoint(&self, kind: ModelKind) -> Result<Checkpoint> {
        let head = self.cfg.head_config(kind);
        let v = self.cfg.schema_version;
        let seed = self.cfg.stage_seed(&["init", kind.as_str()]);
        let mut ck = match &self.cfg.paths.pretrained {
            Some(dir) => {
                let pre = load_bert(dir, Some(self.cfg.tokenizer.max_len), self.cfg.tokenizer.lowercase)
                    .map_err(|e| CliError::config(format!("pretrained encoder at {}: {e}", dir.display())))?;
                init_from_pretrained(kind, pre, &head, v, seed)?
            }
            None => {
                let tok = self.load_vocab()?;
                init_checkpoint(kind, &self.cfg.encoder_config(tok.vocab_size()), &head, v, tok, seed)?
            }
        };
        ck.meta.config_hash = Some(self.config_hash.clone());
        Ok(ck)
    }

    /// Trains one model, resuming from the last epoch checkpoint of an
    /// interrupted run with the same inputs.
    pub fn train(&self, kind: ModelKind) -> Result<Outcome> {
        self.train_until(kind, None)
    }

    /// Like [`Pipeline::train`], but stops after `stop_after_epochs` epochs
    /// exactly as an interrupted run would, leaving the resume files behind.
    pub fn train_until(&self, kind: ModelKind, stop_after_epochs: Option<usize>) -> Result<Outcome> {
        let stage = format!("train --model {kind}");
        let train_path = self.require("build", self.split_path("train"))?;
        let dev_path = self.require("build", self.split_path("dev"))?;
        let tcfg = self.cfg.train.get(kind).clone();
        let mut key = KeyBuilder::new(&stage);
        key.add_file(&train_path)?
            .add_file(&dev_path)?
            .add_json("train", &tcfg)?
            .add_json("encoder", &self.cfg.encoder)?
            .add_json("tokenizer", &self.cfg.tokenizer)?
            .add_json("schema", &self.cfg.schema_version)?
            .add("seed", &self.cfg.seed.to_string())
            .add("checkpoints", &self.checkpoint_dir_for(kind).display().to_string());
        match &self.cfg.paths.pretrained {
            Some(dir) => {
                for f in ["config.json", "vocab.txt", "model.safetensors"] {
                    key.add_file(&dir.join(f)).map_err(|e| CliError::config(format!("pretrained encoder: {e}")))?;
                }
            }
            None => {
                key.add_file(&self.require("build", self.stage_dir("build").join("wordpiece.json"))?)?;
            }
        }
        let key = key.finish();
        let dir = self.stage_dir("train").join(kind.as_str());
        let ckdir = self.checkpoint_dir_for(kind);
        let stamp = format!("train-{kind}");
        if self.fresh(&dir, &stamp, &key) {
            return Ok(Outcome::UpToDate);
        }
        self.make_dir(&dir)?;
        self.make_dir(&ckdir)?;
        let started = Instant::now();

        let last = ckdir.join("last.safetensors");
        let progress_path = dir.join("progress.json");
        let progress: Option<Progress> =
            std::fs::read(&progress_path).ok().and_then(|b| serde_json::from_slice(&b).ok()).filter(|p: &Progress| p.key == key);
        let start = match progress {
            Some(p) if self.cfg.train.resumable && last.exists() && !self.force => {
                let ck = load_checkpoint(&last)?;
                log::info!("train {kind}: resuming at step {}", p.step);
                ck
            }
            _ => self.initial_checkpoint(kind)?,
        };
        let resumed_from = start.meta.step;
        let schema = start.schema();
        let (_, train_s) = read_corpus(&train_path)?;
        let (_, dev_s) = read_corpus(&dev_path)?;
        let train = Dataset::new(train_s, &start.tokenizer, &schema);
        let dev = Dataset::new(dev_s, &start.tokenizer, &schema);

        let metrics = self.metrics_path(kind);
        let earlier: Vec<StepRecord> = if resumed_from > 0 {
            read_jsonl_rows::<StepRecord>(&metrics).unwrap_or_default().into_iter().filter(|r| r.step <= resumed_from).collect()
        } else {
            Vec::new()
        };
        let mut log_out = JsonlWriter::create(&metrics, METRICS_FORMAT, &self.config_hash)?;
        for r in &earlier {
            log_out.row(r)?;
        }

        let best_path = self.best_checkpoint(kind);
        let mut trainer = Trainer::new(start, tcfg, &train, (!dev.is_empty()).then_some(&dev))?;
        trainer.set_dump_dir(dir.clone());
        if resumed_from == 0 {
            let _ = std::fs::remove_file(&best_path);
        } else if best_path.exists() && !dev.is_empty() {
            let best = load_checkpoint(&best_path)?;
            if let Some(&f1) = best.meta.dev_history.last() {
                trainer.set_best(f1, best);
            }
        }
        let spe = trainer.steps_per_epoch();
        let total = trainer.total_steps();
        log::info!("train {kind}: {} sentence(s), {spe} step(s) per epoch, {total} in all", train.len());
        let mut write_error = None;
        while trainer.step() < total {
            let epoch_end = (trainer.step() / spe + 1) * spe;
            trainer.run(Some(epoch_end), &mut |r| {
                if let Err(e) = log_out.row(r) {
                    write_error.get_or_insert(e);
                }
                if r.step % 50 == 0 || r.dev_f1.is_some() {
                    log::info!("train {kind}: step {} epoch {} loss {:.4} dev_f1 {:?}", r.step, r.epoch, r.loss, r.dev_f1);
                }
            })?;
            if let Some(e) = write_error.take() {
                return Err(e);
            }
            log_out.inner.flush()?;
            if self.cfg.train.resumable && trainer.step() < total {
                save_checkpoint(&last, &trainer.checkpoint())?;
                if let Some((_, best)) = trainer.best() {
                    save_checkpoint(&best_path, best)?;
                }
                std::fs::write(&progress_path, serde_json::to_vec(&Progress { key: key.clone(), step: trainer.step() })?)?;
            }
            if stop_after_epochs.is_some_and(|e| trainer.step() >= e * spe && trainer.step() < total) {
                log::info!("train {kind}: stopping at step {}", trainer.step());
                return Ok(Outcome::Ran);
            }
        }
        log_out.finish()?;
        let outcome = trainer.finish();
        let mut final_ck = outcome.final_checkpoint;
        final_ck.optimizer = None;
        let final_path = self.final_checkpoint(kind);
        save_checkpoint(&final_path, &final_ck)?;
        let mut outputs = vec![final_path, metrics];
        let best_dev_f1 = final_ck.meta.dev_history.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        match &outcome.best_checkpoint {
            Some(best) => {
                save_checkpoint(&best_path, best)?;
                outputs.push(best_path);
            }
            None => {
                let _ = std::fs::remove_file(&best_path);
            }
        }
        let summary = TrainSummary {
            model: kind,
            steps: final_ck.meta.step,
            epochs: final_ck.meta.epoch,
            train_sentences: train.len(),
            dev_sentences: dev.len(),
            dev_history: final_ck.meta.dev_history.clone(),
            best_dev_f1,
            parameters: final_ck.store.num_scalars(),
            resumed_from_step: resumed_from,
            seconds: started.elapsed().as_secs_f64(),
        };
        let summary_path = dir.join("summary.json");
        write_json(&summary_path, &self.config_hash, &summary)?;
        outputs.push(summary_path);
        let _ = std::fs::remove_file(&last);
        let _ = std::fs::remove_file(&progress_path);
        log::info!("train {kind}: done in {:.1}s, dev history {:?}", summary.seconds, summary.dev_history);
        write_stamp(&dir, &stamp, &key, &self.config_hash, &outputs)?;
        Ok(Outcome::Ran)
    }

    fn model_checkpoint(&self, kind: ModelKind, use_best: bool) -> Result<PathBuf> {
        let best = self.best_checkpoint(kind);
        if use_best && best.exists() {
            return Ok(best);
        }
        self.require(&format!("train --model {kind}"), self.final_checkpoint(kind))
    }

    /// Evaluates a trained model on one split against the all-sentinel
    /// baseline.
    pub fn evaluate(&self, kind: ModelKind, eval: &EvalSection) -> Result<(Outcome, Evaluation)> {
        let ck_path = self.model_checkpoint(kind, eval.use_best)?;
        let gold_path = self.require("build", self.split_path(eval.split.as_str()))?;
        let mut key = KeyBuilder::new("evaluate");
        key.add_file(&ck_path)?.add_file(&gold_path)?.add_json("eval", eval)?.add_json("schema", &self.cfg.schema_version)?;
        let key = key.finish();
        let criterion = match eval.criterion {
            Criterion::LabelSet => "label_set".to_string(),
            Criterion::SpanOverlap => format!("span_overlap{}", eval.overlap_threshold),
        };
        let variant = format!(
            "{}_{criterion}_tau{}{}",
            eval.split.as_str(),
            eval.tau,
            if eval.collapsed { "_collapsed" } else { "" }
        );
        let dir = self.stage_dir("evaluate").join(kind.as_str()).join(variant);
        let files = ["report.json", "baseline.json", "high_confidence.json"];
        if self.fresh(&dir, "evaluate", &key) {
            let read = |name: &str| -> Result<EvalReport> {
                let mut v: Value = serde_json::from_slice(&std::fs::read(dir.join(name))?)?;
                if let Value::Object(m) = &mut v {
                    m.remove("config_hash");
                }
                Ok(serde_json::from_value(v)?)
            };
            let evaluation =
                Evaluation { dir: dir.clone(), report: read(files[0])?, baseline: read(files[1])?, high_confidence: read(files[2])? };
            return Ok((Outcome::UpToDate, evaluation));
        }
        self.make_dir(&dir)?;
        let ck = load_checkpoint(&ck_path)?;
        let ecfg = eval.eval_config(self.cfg.schema_version);
        let (_, gold) = read_corpus(&gold_path)?;
        let data = Dataset::new(gold.clone(), &ck.tokenizer, &ck.schema());
        let predictions = predict_dataset(&ck.model, &ck.store, &data)?;
        let report = evaluator::evaluate(&predictions, &gold, &ecfg)?;
        let empty: Vec<Prediction> =
            gold.iter().map(|s| Prediction { key: s.key(), labels: Vec::new(), spans: Vec::new() }).collect();
        let baseline = evaluator::evaluate(&empty, &gold, &ecfg)?;
        let high_confidence =
            high_confidence_report(&predictions, &gold, eval.high_confidence_tau, &default_high_confidence_subset(), &ecfg)?;

        let mut outputs = Vec::new();
        for (name, r) in files.iter().zip([&report, &baseline, &high_confidence]) {
            let path = dir.join(name);
            write_json(&path, &self.config_hash, r)?;
            outputs.push(path);
        }
        let text = dir.join("report.txt");
        write_text(&text, &self.config_hash, &evaluator::render_report(&report))?;
        let csv = dir.join("confusion.csv");
        write_text(&csv, &self.config_hash, &report.confusion.to_csv())?;
        let heat = dir.join("confusion.txt");
        write_text(&heat, &self.config_hash, &report.confusion.render_log_heatmap())?;
        let preds_path = dir.join("predictions.jsonl");
        let mut w = JsonlWriter::create(&preds_path, PREDICTIONS_FORMAT, &self.config_hash)?;
        for p in &predictions {
            w.row(p)?;
        }
        w.finish()?;
        outputs.extend([text, csv, heat, preds_path]);
        log::info!(
            "evaluate {kind}: macro-F1 {:.4} (all-sentinel baseline {:.4}) on {} {} sentence(s)",
            report.macro_f1(),
            baseline.macro_f1(),
            gold.len(),
            eval.split.as_str()
        );
        write_stamp(&dir, "evaluate", &key, &self.config_hash, &outputs)?;
        Ok((Outcome::Ran, Evaluation { dir, report, baseline, high_confidence }))
    }

    /// Runs a trained model over new sentences. Input lines are JSON objects
    /// with a `text` field (and optionally `id`) or plain text.
    pub fn extract(&self, kind: ModelKind, input: &Path, output: Option<&Path>, tau: f64) -> Result<(Outcome, PathBuf)> {
        if !input.exists() {
            return Err(CliError::config(format!("input file {} does not exist", input.display())));
        }
        let ck_path = self.model_checkpoint(kind, self.cfg.eval.use_best)?;
        let out = match output {
            Some(p) => p.to_path_buf(),
            None => {
                let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
                self.stage_dir("extract").join(kind.as_str()).join(format!("{stem}.jsonl"))
            }
        };
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let name = format!("extract-{kind}-{}", out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let mut key = KeyBuilder::new("extract");
        key.add_file(&ck_path)?.add_file(input)?.add("tau", &tau.to_string());
        let key = key.finish();
        if self.fresh(&dir, &name, &key) {
            return Ok((Outcome::UpToDate, out));
        }
        self.make_dir(&dir)?;
        let ck = load_checkpoint(&ck_path)?;
        let text = std::fs::read_to_string(input)?;
        let mut w = JsonlWriter::create(&out, EXTRACTIONS_FORMAT, &self.config_hash)?;
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, sentence) = match serde_json::from_str::<Value>(line) {
                Ok(Value::Object(m)) => {
                    let t = m
                        .get("text")
                        .and_then(Value::as_str)
                        .ok_or_else(|| CliError::config(format!("{}:{}: object without a text field", input.display(), i + 1)))?;
                    let id = m.get("id").map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()));
                    (id.unwrap_or_else(|| (i + 1).to_string()), t.to_string())
                }
                _ => ((i + 1).to_string(), line.to_string()),
            };
            w.row(&extract_one(&ck, &id, &sentence, tau)?)?;
            n += 1;
        }
        w.finish()?;
        log::info!("extract {kind}: {n} sentence(s) → {}", out.display());
        write_stamp(&dir, &name, &key, &self.config_hash, std::slice::from_ref(&out))?;
        Ok((Outcome::Ran, out))
    }

    /// Every stage in order, all three models.
    pub fn run_all(&self, offline: bool) -> Result<Vec<(ModelKind, Evaluation)>> {
        for kind in PromptKind::ALL {
            self.generate(kind, None, offline)?;
        }
        self.parse()?;
        self.analyze()?;
        self.build()?;
        let mut out = Vec::new();
        for kind in ModelKind::ALL {
            self.train(kind)?;
            let (_, e) = self.evaluate(kind, &self.cfg.eval)?;
            out.push((kind, e));
        }
        Ok(out)
    }
}

/// Labeled char spans for one sentence.
pub fn extract_one(ck: &Checkpoint, id: &str, text: &str, tau: f64) -> Result<Extraction> {
    let (enc, raw) = ck.predict_text(text)?;
    let p = threshold_prediction(&raw.to_prediction(id, &enc), tau);
    let spans = p
        .spans
        .iter()
        .map(|s| ExtractedSpan {
            start_char: s.start,
            end_char: s.end,
            label: s.label,
            confidence: s.confidence,
            text: factorspan_core::text::char_slice(text, s.start, s.end).to_string(),
        })
        .collect();
    Ok(Extraction { id: id.to_string(), text: text.to_string(), labels: p.labels, spans })
}

/// Sentences of a corpus file, for callers outside the pipeline.
pub fn load_sentences(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    Ok(read_corpus(path)?.1)
}
