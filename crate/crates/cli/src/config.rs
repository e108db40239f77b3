//! The run configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use factorspan_core::builder::{BuilderConfig, NoiseConfig, WeightScheme};
use factorspan_core::evaluator::{EvalConfig, MatchCriterion};
use factorspan_core::genclient::{GenerateOptions, GenerationParams, LiveConfig, PromptKind};
use factorspan_core::schema::SchemaVersion;
use factorspan_core::text::derive_seed;
use factorspan_model::encoder::EncoderConfig;
use factorspan_model::heads::{HeadConfig, ModelKind};
use factorspan_model::{TrainConfig, WordPieceConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::stamp::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the run directory under the workspace.
    pub run_id: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub schema_version: SchemaVersion,
    pub paths: Paths,
    pub generate: GenerateSection,
    pub analyze: AnalyzeSection,
    pub build: BuildSection,
    pub tokenizer: WordPieceConfig,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            run_id: "default".into(),
            seed: 13,
            schema_version: SchemaVersion::V2,
            paths: Paths::default(),
            generate: GenerateSection::default(),
            analyze: AnalyzeSection::default(),
            build: BuildSection::default(),
            tokenizer: WordPieceConfig::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        };
        cfg.normalize();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub workspace: PathBuf,
    /// Recorded completions served in offline mode.
    pub fixtures: PathBuf,
    /// Directory with `config.json`, `vocab.txt` and `model.safetensors`
    /// of a BERT encoder to start from.
    pub pretrained: Option<PathBuf>,
    /// Where trained checkpoints go; defaults to the run's train directory.
    pub checkpoints: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workspace: "workspace".into(),
            fixtures: "fixtures/notes.jsonl".into(),
            pretrained: None,
            checkpoints: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Serve completions from the fixture file instead of the endpoint.
    pub offline: bool,
    pub model_name: String,
    pub temperature: f64,
    /// Records per prompt kind; in offline mode an absent count means every
    /// fixture record of that kind.
    pub counts: BTreeMap<PromptKind, usize>,
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub parallelism: usize,
    pub requests_per_minute: Option<f64>,
    pub max_attempts: u32,
    pub sentence_batch: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let params = GenerationParams::default();
        let live = LiveConfig::default();
        let opts = GenerateOptions::default();
        GenerateSection {
            offline: false,
            model_name: params.model_name,
            temperature: params.temperature,
            counts: BTreeMap::new(),
            endpoint: live.endpoint,
            api_key_env: live.api_key_env,
            timeout_secs: live.timeout.as_secs(),
            parallelism: opts.parallelism,
            requests_per_minute: opts.requests_per_minute,
            max_attempts: opts.max_attempts,
            sentence_batch: opts.sentence_batch,
        }
    }
}

impl GenerateSection {
    pub fn params(&self) -> GenerationParams {
        GenerationParams { model_name: self.model_name.clone(), temperature: self.temperature, ..GenerationParams::default() }
    }

    pub fn options(&self) -> GenerateOptions {
        GenerateOptions {
            max_attempts: self.max_attempts,
            parallelism: self.parallelism,
            requests_per_minute: self.requests_per_minute,
            sentence_batch: self.sentence_batch,
            ..GenerateOptions::default()
        }
    }

    pub fn live(&self) -> LiveConfig {
        LiveConfig {
            endpoint: self.endpoint.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout: std::time::Duration::from_secs(self.timeout_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub top_k: usize,
    pub pair_budget: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { top_k: 3, pair_budget: factorspan_core::analytics::DEFAULT_PAIR_BUDGET }
    }
}

/// Dataset construction; the schema version comes from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub keep_fraction: f64,
    pub keywords: BTreeMap<String, Vec<String>>,
    pub upsample_multiplier: f64,
    pub noise: NoiseConfig,
    pub proportions: [f64; 3],
    pub weight_scheme: WeightScheme,
    pub merge_no_label: bool,
}

impl Default for BuildSection {
    fn default() -> Self {
        let b = BuilderConfig::default();
        BuildSection {
            keep_fraction: b.keep_fraction,
            keywords: b.keywords,
            upsample_multiplier: b.upsample_multiplier,
            noise: b.noise,
            proportions: b.proportions,
            weight_scheme: b.weight_scheme,
            merge_no_label: b.merge_no_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub layer_norm_eps: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(0);
        EncoderSection { hidden: d.hidden, layers: d.layers, heads: d.heads, intermediate: d.intermediate, layer_norm_eps: d.layer_norm_eps }
    }
}

/// Per-model training settings. `model` and `seed` inside each table are
/// ignored: the kind comes from the table name and the seed from the master
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub token: TrainConfig,
    pub sentence: TrainConfig,
    pub span: TrainConfig,
    /// Write a resumable checkpoint after every epoch.
    pub resumable: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            token: TrainConfig::new(ModelKind::Token),
            sentence: TrainConfig::new(ModelKind::Sentence),
            span: TrainConfig::new(ModelKind::Span),
            resumable: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    LabelSet,
    SpanOverlap,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "label_set" => Ok(Criterion::LabelSet),
            "span_overlap" => Ok(Criterion::SpanOverlap),
            other => Err(format!("unknown criterion `{other}` (expected label_set or span_overlap)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub criterion: Criterion,
    pub overlap_threshold: f64,
    pub tau: f64,
    pub collapsed: bool,
    pub min_support: usize,
    pub split: SplitName,
    /// Threshold of the high-confidence report.
    pub high_confidence_tau: f64,
    /// Evaluate the best-dev checkpoint when there is one.
    pub use_best: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            criterion: Criterion::LabelSet,
            overlap_threshold: 0.5,
            tau: 0.0,
            collapsed: false,
            min_support: 2,
            split: SplitName::Test,
            high_confidence_tau: 0.5,
            use_best: true,
        }
    }
}

impl EvalSection {
    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.high_confidence_tau) {
            return Err("thresholds must lie in [0, 1]".into());
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err("overlap_threshold must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(CliError::Config)
    }

    pub fn eval_config(&self, schema_version: SchemaVersion) -> EvalConfig {
        let criterion = match self.criterion {
            Criterion::LabelSet => MatchCriterion::LabelSet,
            Criterion::SpanOverlap => MatchCriterion::SpanOverlap { threshold: self.overlap_threshold },
        };
        EvalConfig { criterion, tau: self.tau, collapsed: self.collapsed, min_support: self.min_support, schema_version }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, String> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    fn normalize(&mut self) {
        self.train.token.model = ModelKind::Token;
        self.train.sentence.model = ModelKind::Sentence;
        self.train.span.model = ModelKind::Span;
        for kind in ModelKind::ALL {
            let seed = self.stage_seed(&["train", kind.as_str()]);
            self.train.get_mut(kind).seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(format!("run_id `{}` is not a plain directory name", self.run_id));
        }
        for kind in ModelKind::ALL {
            self.train.get(kind).validate().map_err(|e| format!("[train.{kind}]: {e}"))?;
        }
        self.builder().cleaning().map_err(|e| format!("[build]: {e}"))?;
        self.encoder_config(self.tokenizer.vocab_size).validate().map_err(|e| format!("[encoder]: {e}"))?;
        if self.tokenizer.max_len < 3 {
            return Err("[tokenizer] max_len must be at least 3".into());
        }
        self.eval.check().map_err(|e| format!("[eval] {e}"))
    }

    /// Canonical hash of the whole configuration, embedded in artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn stage_seed(&self, parts: &[&str]) -> u64 {
        derive_seed(self.seed, parts)
    }

    pub fn builder(&self) -> BuilderConfig {
        let b = &self.build;
        BuilderConfig {
            schema_version: self.schema_version,
            keep_fraction: b.keep_fraction,
            keywords: b.keywords.clone(),
            upsample_multiplier: b.upsample_multiplier,
            noise: b.noise.clone(),
            proportions: b.proportions,
            weight_scheme: b.weight_scheme,
            merge_no_label: b.merge_no_label,
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            vocab_source: "trained".into(),
            vocab_size,
            hidden: e.hidden,
            layers: e.layers,
            heads: e.heads,
            intermediate: e.intermediate,
            max_len: self.tokenizer.max_len,
            dropout: 0.1,
            cased: !self.tokenizer.lowercase,
            layer_norm_eps: e.layer_norm_eps,
        }
    }

    pub fn head_config(&self, kind: ModelKind) -> HeadConfig {
        self.train.get(kind).head.clone()
    }
}

impl TrainSection {
    pub fn get(&self, kind: ModelKind) -> &TrainConfig {
        match kind {
            ModelKind::Token => &self.token,
            ModelKind::Sentence => &self.sentence,
            ModelKind::Span => &self.span,
        }
    }

    pub fn get_mut(&mut self, kind: ModelKind) -> &mut TrainConfig {
        match kind {
            ModelKind::Token => &mut self.token,
            ModelKind::Sentence => &mut self.sentence,
            ModelKind::Span => &mut self.span,
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace);
        fix(&mut self.fixtures);
        if let Some(p) = self.pretrained.as_mut() {
            fix(p);
        }
        if let Some(p) = self.checkpoints.as_mut() {
            fix(p);
        }
    }
}
