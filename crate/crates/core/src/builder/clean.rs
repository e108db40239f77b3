use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StageReport;
use crate::analytics::lemmatize;
use crate::corpus::AnnotatedSentence;
use crate::schema::{label_space, Label, SchemaVersion};
use crate::{text, Error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    /// Lemmatized keywords per label.
    pub keywords: BTreeMap<Label, BTreeSet<String>>,
    pub keep_fraction: f64,
}

impl CleaningConfig {
    pub fn new(keywords: BTreeMap<Label, BTreeSet<String>>, keep_fraction: f64) -> Result<CleaningConfig, Error> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
        }
        Ok(CleaningConfig { keywords, keep_fraction })
    }

    /// Labels other than `label` owning a keyword that `label` does not
    /// share, in label order.
    fn foreign_hits(&self, label: Label, words: &BTreeSet<String>) -> Option<Label> {
        let own = self.keywords.get(&label);
        self.keywords.iter().filter(|(m, _)| **m != label).find_map(|(m, kws)| {
            kws.iter()
                .any(|k| words.contains(k) && !own.is_some_and(|o| o.contains(k)))
                .then_some(*m)
        })
    }
}

/// Lowercased, lemmatized words split on any non-alphanumeric character, so
/// "non-adherence" yields "non" and "adherence".
pub fn keyword_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| lemmatize(&w.to_lowercase()))
        .collect()
}

/// Each label's factor-name words.
pub fn default_keyword_map(version: SchemaVersion) -> BTreeMap<Label, BTreeSet<String>> {
    label_space(version)
        .into_iter()
        .filter_map(|l| l.factor().map(|f| (l, keyword_tokens(f.name()).into_iter().collect())))
        .collect()
}

/// Removes, with probability `1 - keep_fraction`, every span whose text
/// contains a keyword belonging only to some other label. Sentences left
/// without annotations are dropped rather than relabelled as unannotated.
pub fn clean_cross_label(
    corpus: Vec<AnnotatedSentence>,
    cfg: &CleaningConfig,
    seed: u64,
) -> (Vec<AnnotatedSentence>, StageReport) {
    let mut report = StageReport::begin("clean", &corpus);
    let mut removed_pairs: BTreeMap<String, usize> = BTreeMap::new();
    let mut flagged = 0usize;
    let mut removed = 0usize;
    let mut dropped_sentences = 0usize;
    let mut out = Vec::with_capacity(corpus.len());
    for mut s in corpus {
        if s.annotations.is_empty() {
            out.push(s);
            continue;
        }
        let copy = s.provenance.copy.to_string();
        let idx = s.sentence_index.to_string();
        let mut rng = text::derive_rng(seed, &[&s.note_id, &idx, &copy]);
        let before = s.annotations.len();
        let mut kept = Vec::with_capacity(before);
        for a in &s.annotations {
            let words: BTreeSet<String> = keyword_tokens(s.span_text(a)).into_iter().collect();
            match cfg.foreign_hits(a.label, &words) {
                Some(m) => {
                    flagged += 1;
                    if rng.random::<f64>() < cfg.keep_fraction {
                        kept.push(*a);
                    } else {
                        *removed_pairs.entry(format!("{} <- {}", a.label, m)).or_insert(0) += 1;
                    }
                }
                None => kept.push(*a),
            }
        }
        removed += before - kept.len();
        if kept.is_empty() {
            dropped_sentences += 1;
            continue;
        }
        if kept.len() < before {
            s.provenance.mark("cleaned");
        }
        s.annotations = kept;
        out.push(s);
    }
    report.annotations_removed = removed;
    report.detail("keep_fraction", cfg.keep_fraction);
    report.detail("flagged_spans", flagged);
    report.detail("dropped_sentences", dropped_sentences);
    report.detail("removed_by_pair", removed_pairs);
    let report = report.finish(&out);
    (out, report)
}
