//! Turns the parsed sentence corpus into train/dev/test sets.
//!
//! Every stage returns a [`StageReport`] whose `annotations_added` and
//! `annotations_removed` are counted from the stage's own actions, so the
//! difference between the corpus sizes before and after can be audited.

mod align;
mod clean;
mod merge;
mod noise;
mod split;
mod upsample;
mod weights;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use align::{align, decode_span_chars, AlignedExample, AlignedSpan, TokenEncoding, Tokenizer, WhitespaceTokenizer};
pub use clean::{clean_cross_label, default_keyword_map, keyword_tokens, CleaningConfig};
pub use merge::merge_no_label;
pub use noise::{inject_noise, lowercase_sentence, NoiseConfig, NoiseOutcome};
pub use split::{split, DatasetSplit, SplitManifest};
pub use upsample::upsample_diverse;
pub use weights::{class_weights, ClassWeights, WeightScheme};

use crate::corpus::{label_counts, total_annotations, AnnotatedSentence, Partition};
use crate::genclient::RawNote;
use crate::schema::{migrate_label, Label, SchemaVersion};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub sentences_in: usize,
    pub sentences_out: usize,
    pub annotations_in: usize,
    pub annotations_out: usize,
    pub annotations_added: usize,
    pub annotations_removed: usize,
    pub labels_before: BTreeMap<Label, usize>,
    pub labels_after: BTreeMap<Label, usize>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl StageReport {
    pub fn begin(stage: &str, input: &[AnnotatedSentence]) -> StageReport {
        StageReport {
            stage: stage.to_string(),
            sentences_in: input.len(),
            sentences_out: 0,
            annotations_in: total_annotations(input),
            annotations_out: 0,
            annotations_added: 0,
            annotations_removed: 0,
            labels_before: label_counts(input),
            labels_after: BTreeMap::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn finish(mut self, output: &[AnnotatedSentence]) -> StageReport {
        self.sentences_out = output.len();
        self.annotations_out = total_annotations(output);
        self.labels_after = label_counts(output);
        self
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    /// Net change recorded by the stage itself.
    pub fn documented_change(&self) -> i64 {
        self.annotations_added as i64 - self.annotations_removed as i64
    }

    /// Net change observed between input and output.
    pub fn observed_change(&self) -> i64 {
        self.annotations_out as i64 - self.annotations_in as i64
    }

    pub fn is_conserved(&self) -> bool {
        self.documented_change() == self.observed_change()
    }
}

/// Maps every annotation onto `to`, dropping labels absent from it and
/// duplicates created by merged classes.
pub fn migrate_corpus(
    corpus: Vec<AnnotatedSentence>,
    from: SchemaVersion,
    to: SchemaVersion,
) -> (Vec<AnnotatedSentence>, StageReport) {
    let mut report = StageReport::begin("migrate", &corpus);
    let mut dropped = 0usize;
    let mut merged = 0usize;
    let out: Vec<AnnotatedSentence> = corpus
        .into_iter()
        .map(|mut s| {
            let mut kept = Vec::with_capacity(s.annotations.len());
            for a in &s.annotations {
                match migrate_label(a.label, from, to) {
                    None => dropped += 1,
                    Some(label) => {
                        let m = crate::corpus::SpanAnnotation { label, ..*a };
                        if kept.contains(&m) {
                            merged += 1;
                        } else {
                            kept.push(m);
                        }
                    }
                }
            }
            s.annotations = kept;
            if from != to {
                s.provenance.mark("migrated");
            }
            s
        })
        .collect();
    report.annotations_removed = dropped + merged;
    report.detail("from", from);
    report.detail("to", to);
    report.detail("dropped_labels", dropped);
    report.detail("merged_duplicates", merged);
    let report = report.finish(&out);
    (out, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub schema_version: SchemaVersion,
    pub keep_fraction: f64,
    /// Overrides of the default keyword map, keyed by label name.
    pub keywords: BTreeMap<String, Vec<String>>,
    pub upsample_multiplier: f64,
    pub noise: NoiseConfig,
    pub proportions: [f64; 3],
    pub weight_scheme: WeightScheme,
    pub merge_no_label: bool,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            schema_version: SchemaVersion::V2,
            keep_fraction: 0.1,
            keywords: BTreeMap::new(),
            upsample_multiplier: 2.0,
            noise: NoiseConfig::default(),
            proportions: [0.8, 0.1, 0.1],
            weight_scheme: WeightScheme::Log,
            merge_no_label: true,
        }
    }
}

impl BuilderConfig {
    pub fn cleaning(&self) -> Result<CleaningConfig, Error> {
        let mut keywords = default_keyword_map(self.schema_version);
        for (name, words) in &self.keywords {
            let label: Label = name
                .parse()
                .map_err(|_| Error::InvalidInput(format!("unknown label `{name}` in keyword map")))?;
            keywords.insert(label, words.iter().flat_map(|w| keyword_tokens(w)).collect());
        }
        CleaningConfig::new(keywords, self.keep_fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOutput {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub manifest: SplitManifest,
    pub weights: ClassWeights,
    pub reports: Vec<StageReport>,
}

/// Runs the full stage sequence:
/// migrate, clean, merge no-label sentences, upsample, split, noise (train
/// only), optional lowercasing, class weights.
pub fn build_dataset(
    parsed: Vec<AnnotatedSentence>,
    parsed_version: SchemaVersion,
    no_label: Option<&[RawNote]>,
    cfg: &BuilderConfig,
    seed: u64,
) -> Result<BuildOutput, Error> {
    let mut reports = Vec::new();
    let (corpus, r) = migrate_corpus(parsed, parsed_version, cfg.schema_version);
    reports.push(r);

    let cleaning = cfg.cleaning()?;
    let (corpus, r) = clean_cross_label(corpus, &cleaning, crate::text::derive_seed(seed, &["clean"]));
    reports.push(r);

    let corpus = match (cfg.merge_no_label, no_label) {
        (true, Some(generated)) => {
            let (c, r) = merge_no_label(corpus, generated);
            reports.push(r);
            c
        }
        _ => corpus,
    };

    let (corpus, r) = upsample_diverse(corpus, cfg.upsample_multiplier, crate::text::derive_seed(seed, &["upsample"]))?;
    reports.push(r);

    let (parts, r) = split(corpus, cfg.proportions, crate::text::derive_seed(seed, &["split"]))?;
    reports.push(r);
    let DatasetSplit { mut train, mut dev, mut test, manifest } = parts;

    let noise_seed = crate::text::derive_seed(seed, &["noise"]);
    let mut r = StageReport::begin("noise", &train);
    let mut dropped = 0usize;
    train = train
        .into_iter()
        .map(|s| {
            let out = noise::noise_in_stream(&s, &cfg.noise, noise_seed);
            dropped += out.dropped;
            out.sentence
        })
        .collect();
    r.annotations_removed = dropped;
    r.detail("partition", Partition::Train);
    reports.push(r.finish(&train));

    if cfg.noise.lowercase {
        let before: Vec<AnnotatedSentence> = train.iter().chain(&dev).chain(&test).cloned().collect();
        let r = StageReport::begin("lowercase", &before);
        for part in [&mut train, &mut dev, &mut test] {
            for s in part.iter_mut() {
                *s = lowercase_sentence(s);
            }
        }
        let after: Vec<AnnotatedSentence> = train.iter().chain(&dev).chain(&test).cloned().collect();
        reports.push(r.finish(&after));
    }

    let labels = crate::schema::label_space(cfg.schema_version);
    let weights = class_weights(&crate::corpus::sentence_label_counts(&train), &labels, cfg.weight_scheme)?;
    Ok(BuildOutput { train, dev, test, manifest, weights, reports })
}
