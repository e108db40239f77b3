//! Random corpora shaped like parsed notes.
#![allow(dead_code)]

use factorspan_core::builder::default_keyword_map;
use factorspan_core::genclient::{PromptKind, RawNote};
use factorspan_core::schema::label_space;
use factorspan_core::{AnnotatedSentence, Label, SchemaVersion, SpanAnnotation};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &[
    "patient", "reports", "years", "ago", "with", "episodes", "of", "low", "mood", "during", "winter", "and", "after",
    "discharge", "café", "naïve", "mother", "work", "sleep", "poorly", "since", "march", "currently", "denies",
];
/// Words the noise stage may delete, strip or replace.
const NOISY: &[&str] = &["she", "he", "her", "him", "they", "them", "the", "a", "an", "is", "was", "has", "had", "patient's", "their", "it's"];
const PUNCT: &[&str] = &[",", ".", ";", "(", ")", "-", "!"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn factor_labels(v: SchemaVersion) -> Vec<Label> {
    label_space(v).into_iter().filter(|l| !l.is_sentinel()).collect()
}

/// Words that name labels or are cleaning keywords, so that explicit
/// mentions and cross-label keywords both turn up.
fn label_words(v: SchemaVersion) -> Vec<String> {
    let mut words: Vec<String> = factor_labels(v)
        .iter()
        .filter_map(|l| l.factor())
        .flat_map(|f| f.words().map(str::to_string).collect::<Vec<_>>())
        .collect();
    for kws in default_keyword_map(v).values() {
        words.extend(kws.iter().cloned());
    }
    words.sort();
    words.dedup();
    words
}

fn word(rng: &mut ChaCha8Rng, topical: &[String]) -> String {
    match rng.random_range(0..10) {
        0..=3 => FILLER.choose(rng).unwrap().to_string(),
        4..=6 => NOISY.choose(rng).unwrap().to_string(),
        7 => PUNCT.choose(rng).unwrap().to_string(),
        _ => topical.choose(rng).unwrap().clone(),
    }
}

/// One sentence of 1..=24 tokens with up to three annotated extents, some
/// carrying two labels.
pub fn sentence(rng: &mut ChaCha8Rng, note: &str, index: usize, v: SchemaVersion) -> AnnotatedSentence {
    let labels = factor_labels(v);
    let topical = label_words(v);
    let n = rng.random_range(1..=24);
    let mut text = String::new();
    let mut bounds = Vec::with_capacity(n);
    let mut len = 0usize;
    for i in 0..n {
        let w = word(rng, &topical);
        if i > 0 && !(w.len() == 1 && PUNCT.contains(&w.as_str()) && rng.random_bool(0.5)) {
            text.push(' ');
            len += 1;
        }
        let wl = w.chars().count();
        bounds.push((len, len + wl));
        text.push_str(&w);
        len += wl;
    }
    let mut annotations = Vec::new();
    let mut next = 0usize;
    for _ in 0..rng.random_range(0..=3) {
        if next >= n {
            break;
        }
        let a = rng.random_range(next..n);
        let b = rng.random_range(a..n.min(a + 6));
        let first = *labels.choose(rng).unwrap();
        annotations.push(SpanAnnotation::new(bounds[a].0, bounds[b].1, first));
        if rng.random_bool(0.2) {
            let second = *labels.choose(rng).unwrap();
            if second != first {
                annotations.push(SpanAnnotation::new(bounds[a].0, bounds[b].1, second));
            }
        }
        next = b + 1;
    }
    let s = AnnotatedSentence::new(note, index, text).with_annotations(annotations);
    s.validate().expect("generator yields valid sentences");
    s
}

pub fn corpus(seed: u64, notes: usize, v: SchemaVersion) -> Vec<AnnotatedSentence> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for n in 0..notes {
        let id = format!("note{n:03}");
        for i in 0..rng.random_range(1..=12) {
            out.push(sentence(&mut rng, &id, i, v));
        }
    }
    out
}

/// Generated no-label sentences; roughly one in ten carries a label token
/// and should be rejected.
pub fn no_label_notes(seed: u64, n: usize, v: SchemaVersion) -> Vec<RawNote> {
    let mut rng = rng(seed);
    let labels = factor_labels(v);
    (0..n)
        .map(|i| {
            let mut s = sentence(&mut rng, "g", i, v);
            s.annotations.clear();
            let mut text = s.text;
            if rng.random_bool(0.1) {
                text.push(' ');
                text.push_str(&labels.choose(&mut rng).unwrap().to_token().unwrap());
            }
            RawNote::new(format!("gen{i:04}"), PromptKind::NoLabelSentences, text)
        })
        .collect()
}
