//! Annotated sentence records and their JSONL persistence.
//!
//! All offsets are character (Unicode scalar) indices into the cleaned
//! sentence text, end-exclusive.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::schema::{Label, SchemaDocument, SchemaVersion};
use crate::text;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

impl SpanAnnotation {
    pub fn new(start: usize, end: usize, label: Label) -> Self {
        SpanAnnotation { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

/// Where a sentence came from and what has been done to it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub copy: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl Provenance {
    pub fn mark(&mut self, stage: &str) {
        if !self.stages.iter().any(|s| s == stage) {
            self.stages.push(stage.to_string());
        }
    }

    pub fn has(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub note_id: String,
    pub sentence_index: usize,
    pub text: String,
    pub annotations: Vec<SpanAnnotation>,
    #[serde(default)]
    pub section_tag: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl AnnotatedSentence {
    pub fn new(note_id: impl Into<String>, sentence_index: usize, text: impl Into<String>) -> Self {
        AnnotatedSentence {
            note_id: note_id.into(),
            sentence_index,
            text: text.into(),
            annotations: Vec::new(),
            section_tag: None,
            provenance: Provenance::default(),
        }
    }

    pub fn with_annotations(mut self, annotations: Vec<SpanAnnotation>) -> Self {
        self.annotations = annotations;
        self
    }

    /// Stable identity, distinguishing upsampled copies.
    pub fn key(&self) -> String {
        if self.provenance.copy == 0 {
            format!("{}#{}", self.note_id, self.sentence_index)
        } else {
            format!("{}#{}~{}", self.note_id, self.sentence_index, self.provenance.copy)
        }
    }

    pub fn is_unannotated(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn span_text(&self, annotation: &SpanAnnotation) -> &str {
        text::char_slice(&self.text, annotation.start, annotation.end)
    }

    /// Distinct labels in annotation order, or the sentinel for an
    /// unannotated sentence.
    pub fn label_set(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = Vec::new();
        for a in &self.annotations {
            if !labels.contains(&a.label) {
                labels.push(a.label);
            }
        }
        if labels.is_empty() {
            labels.push(Label::NoAnnotation);
        }
        labels
    }

    /// Checks offsets, ordering and the extent rule: two annotations either
    /// share an extent (compound label) or do not overlap.
    pub fn validate(&self) -> Result<(), String> {
        let len = self.char_len();
        let mut prev: Option<&SpanAnnotation> = None;
        for a in &self.annotations {
            if a.start >= a.end || a.end > len {
                return Err(format!("{}: bad span {}..{} (len {len})", self.key(), a.start, a.end));
            }
            if a.label.is_sentinel() {
                return Err(format!("{}: sentinel used as span label", self.key()));
            }
            if let Some(p) = prev {
                let same = p.start == a.start && p.end == a.end;
                if !same && (a.start < p.end || a.start < p.start) {
                    return Err(format!(
                        "{}: spans {}..{} and {}..{} overlap or are unsorted",
                        self.key(),
                        p.start,
                        p.end,
                        a.start,
                        a.end
                    ));
                }
            }
            prev = Some(a);
        }
        Ok(())
    }
}

/// First line of every sentence corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub schema_version: SchemaVersion,
    pub schema: SchemaDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl CorpusHeader {
    pub const FORMAT: &'static str = "factorspan.annotated_sentences.v1";

    pub fn new(schema: &crate::schema::Schema, config_hash: Option<String>) -> Self {
        CorpusHeader {
            format: Self::FORMAT.to_string(),
            schema_version: schema.version(),
            schema: schema.document(),
            config_hash,
        }
    }
}

pub fn write_corpus(path: &Path, header: &CorpusHeader, sentences: &[AnnotatedSentence]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for s in sentences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<AnnotatedSentence>), Error> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: CorpusHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::parse_at(path, 1, e))?,
        None => return Err(Error::Format(format!("{}: empty corpus file", path.display()))),
    };
    if header.format != CorpusHeader::FORMAT {
        return Err(Error::Format(format!("{}: unexpected format `{}`", path.display(), header.format)));
    }
    let mut sentences = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: AnnotatedSentence = serde_json::from_str(&line).map_err(|e| Error::parse_at(path, i + 1, e))?;
        sentences.push(s);
    }
    Ok((header, sentences))
}

/// Annotation counts per label.
pub fn label_counts(sentences: &[AnnotatedSentence]) -> BTreeMap<Label, usize> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for a in &s.annotations {
            *counts.entry(a.label).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level class counts: each distinct label of a sentence once, the
/// sentinel for unannotated sentences.
pub fn sentence_label_counts(sentences: &[AnnotatedSentence]) -> BTreeMap<Label, usize> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for l in s.label_set() {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    counts
}

pub fn total_annotations(sentences: &[AnnotatedSentence]) -> usize {
    sentences.iter().map(|s| s.annotations.len()).sum()
}
