//! Diversity diagnostics over labelled spans: TF-IDF word ranking per label,
//! explicit label-word mention rates and mean pairwise Jaccard similarity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::schema::Label;
use crate::text;

/// Pair budget above which Jaccard similarity is estimated by sampling.
pub const DEFAULT_PAIR_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    /// w_l: occurrences of each word in this label's spans.
    pub word_freq: BTreeMap<String, u64>,
    /// W_l: total words in this label's spans.
    pub total_words: u64,
    pub span_count: u64,
    /// Number of spans containing each word at least once.
    pub spans_containing: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStatistics {
    pub labels: BTreeMap<Label, LabelStats>,
    /// w: occurrences of each word across all labels.
    pub global: BTreeMap<String, u64>,
}

impl CorpusStatistics {
    pub fn from_corpus(corpus: &[AnnotatedSentence]) -> CorpusStatistics {
        let mut stats = CorpusStatistics::default();
        for s in corpus {
            for a in &s.annotations {
                stats.add_span(a.label, s.span_text(a));
            }
        }
        stats
    }

    pub fn from_spans<'a>(spans: impl IntoIterator<Item = (Label, &'a str)>) -> CorpusStatistics {
        let mut stats = CorpusStatistics::default();
        for (label, span) in spans {
            stats.add_span(label, span);
        }
        stats
    }

    pub fn add_span(&mut self, label: Label, span: &str) {
        let words = text::stat_words(span);
        let entry = self.labels.entry(label).or_default();
        entry.span_count += 1;
        entry.total_words += words.len() as u64;
        for w in &words {
            *entry.word_freq.entry(w.clone()).or_insert(0) += 1;
            *self.global.entry(w.clone()).or_insert(0) += 1;
        }
        let distinct: BTreeSet<&String> = words.iter().collect();
        for w in distinct {
            *entry.spans_containing.entry(w.clone()).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &CorpusStatistics) {
        for (label, o) in &other.labels {
            let e = self.labels.entry(*label).or_default();
            e.total_words += o.total_words;
            e.span_count += o.span_count;
            for (w, c) in &o.word_freq {
                *e.word_freq.entry(w.clone()).or_insert(0) += c;
            }
            for (w, c) in &o.spans_containing {
                *e.spans_containing.entry(w.clone()).or_insert(0) += c;
            }
        }
        for (w, c) in &other.global {
            *self.global.entry(w.clone()).or_insert(0) += c;
        }
    }

    /// Every count multiplied by `k`, as if the corpus were repeated k times.
    pub fn scaled(&self, k: u64) -> CorpusStatistics {
        let scale = |m: &BTreeMap<String, u64>| m.iter().map(|(w, c)| (w.clone(), c * k)).collect();
        CorpusStatistics {
            labels: self
                .labels
                .iter()
                .map(|(l, s)| {
                    (
                        *l,
                        LabelStats {
                            word_freq: scale(&s.word_freq),
                            total_words: s.total_words * k,
                            span_count: s.span_count * k,
                            spans_containing: scale(&s.spans_containing),
                        },
                    )
                })
                .collect(),
            global: scale(&self.global),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub word: String,
    pub score: f64,
    /// Fraction of the label's spans containing the word.
    pub prevalence: f64,
}

/// (w_l / W_l) / ln(w / w_l + 1).
pub fn tfidf_score(w_l: u64, total_l: u64, w: u64) -> f64 {
    (w_l as f64 / total_l as f64) / (w as f64 / w_l as f64 + 1.0).ln()
}

/// Top-k words for `label`, highest score first, ties broken alphabetically.
pub fn tfidf_rank(stats: &CorpusStatistics, label: Label, k: usize) -> Vec<RankedWord> {
    let Some(ls) = stats.labels.get(&label) else {
        return Vec::new();
    };
    if ls.span_count == 0 || ls.total_words == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<RankedWord> = ls
        .word_freq
        .iter()
        .map(|(word, &w_l)| RankedWord {
            word: word.clone(),
            score: tfidf_score(w_l, ls.total_words, stats.global[word]),
            prevalence: ls.spans_containing.get(word).copied().unwrap_or(0) as f64 / ls.span_count as f64,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    ranked.truncate(k);
    ranked
}

/// Whether the span mentions every word of the label's factor name.
/// Polarity words are not label words.
pub fn is_explicit_mention(span: &str, label: Label) -> bool {
    let Some(factor) = label.factor() else {
        return false;
    };
    let lower = span.to_lowercase();
    factor.words().all(|w| lower.contains(w))
}

/// Fraction of `label` spans that mention all label words; `None` when the
/// label has no spans.
pub fn explicit_mention_rate(corpus: &[AnnotatedSentence], label: Label) -> Option<f64> {
    let mut total = 0usize;
    let mut explicit = 0usize;
    for s in corpus {
        for a in s.annotations.iter().filter(|a| a.label == label) {
            total += 1;
            if is_explicit_mention(s.span_text(a), label) {
                explicit += 1;
            }
        }
    }
    (total > 0).then(|| explicit as f64 / total as f64)
}

const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("was", "be"),
    ("were", "be"),
    ("is", "be"),
    ("are", "be"),
    ("been", "be"),
    ("being", "be"),
    ("am", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("took", "take"),
    ("taken", "take"),
    ("gave", "give"),
    ("given", "give"),
    ("felt", "feel"),
    ("made", "make"),
    ("said", "say"),
    ("thought", "think"),
    ("began", "begin"),
    ("begun", "begin"),
    ("lost", "lose"),
    ("left", "leave"),
    ("told", "tell"),
    ("kept", "keep"),
    ("slept", "sleep"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("saw", "see"),
    ("seen", "see"),
    ("got", "get"),
    ("bought", "buy"),
    ("brought", "bring"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("wrote", "write"),
    ("written", "write"),
    ("this", "this"),
    ("his", "his"),
    ("thus", "thus"),
    ("always", "always"),
    ("diagnosis", "diagnosis"),
    ("psychosis", "psychosis"),
    ("analysis", "analysis"),
    ("crisis", "crisis"),
    ("stress", "stress"),
    ("status", "status"),
    ("nausea", "nausea"),
    ("news", "news"),
    ("during", "during"),
    ("nothing", "nothing"),
    ("something", "something"),
    ("anything", "anything"),
    ("everything", "everything"),
    ("morning", "morning"),
    ("evening", "evening"),
    ("ceiling", "ceiling"),
    ("bring", "bring"),
    ("thing", "thing"),
    ("feed", "feed"),
    ("need", "need"),
    ("bed", "bed"),
    ("red", "red"),
    ("shed", "shed"),
    ("indeed", "indeed"),
];

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Removes a doubled final consonant left behind by -ing/-ed stripping
/// ("stopped" → "stopp" → "stop"); l, s and z doubles are kept ("fall").
fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// Rule-based lemma for lowercase words: exception table, then plural and
/// -ing/-ed suffix stripping.
pub fn lemmatize(word: &str) -> String {
    if let Some((_, lemma)) = LEMMA_EXCEPTIONS.iter().find(|(w, _)| *w == word) {
        return (*lemma).to_string();
    }
    if !word.is_ascii() || word.len() <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("sses") {
        return format!("{stem}ss");
    }
    for suffix in ["xes", "zes", "ches", "shes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..word.len() - 1].to_string();
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if stem.len() >= 3 && stem.bytes().any(is_vowel) {
            return undouble(stem);
        }
    }
    if let Some(stem) = word.strip_suffix("ied") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if stem.len() >= 3 && stem.bytes().any(is_vowel) {
            return undouble(stem);
        }
    }
    word.to_string()
}

pub fn lemma_set(span: &str) -> BTreeSet<String> {
    text::stat_words(span).iter().map(|w| lemmatize(w)).collect()
}

/// |A ∩ B| / |A ∪ B|; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean pairwise Jaccard similarity of lemmatized span word sets for one
/// label. Exact when the pair count is within `pair_budget`, otherwise the
/// mean over `pair_budget` uniformly sampled distinct pairs. `None` with fewer
/// than two spans.
pub fn jaccard_similarity(corpus: &[AnnotatedSentence], label: Label, pair_budget: usize, seed: u64) -> Option<f64> {
    let sets: Vec<BTreeSet<String>> = corpus
        .iter()
        .flat_map(|s| s.annotations.iter().filter(|a| a.label == label).map(move |a| lemma_set(s.span_text(a))))
        .collect();
    mean_pairwise_jaccard(&sets, pair_budget, text::derive_seed(seed, &["jaccard", &label.to_string()]))
}

pub fn mean_pairwise_jaccard(sets: &[BTreeSet<String>], pair_budget: usize, seed: u64) -> Option<f64> {
    let m = sets.len();
    if m < 2 {
        return None;
    }
    let pairs = m * (m - 1) / 2;
    if pairs <= pair_budget.max(1) {
        let mut sum = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                sum += jaccard(&sets[i], &sets[j]);
            }
        }
        return Some(sum / pairs as f64);
    }
    let mut rng = text::derive_rng(seed, &[]);
    let mut sum = 0.0;
    for _ in 0..pair_budget {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        sum += jaccard(&sets[i], &sets[j]);
    }
    Some(sum / pair_budget as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDiversity {
    pub label: Label,
    pub spans: u64,
    pub top_words: Vec<RankedWord>,
    pub explicit_mention_rate: Option<f64>,
    pub mean_jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// How label words were derived for the explicit-mention rate.
    pub label_word_policy: String,
    pub top_k: usize,
    pub pair_budget: usize,
    pub labels: Vec<LabelDiversity>,
}

#[derive(Debug, Clone)]
pub struct AnalyticsConfig {
    pub top_k: usize,
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig { top_k: 3, pair_budget: DEFAULT_PAIR_BUDGET, seed: 0 }
    }
}

/// Diagnostics for every label that has at least one span, in label order.
pub fn diversity_report(corpus: &[AnnotatedSentence], labels: &[Label], cfg: &AnalyticsConfig) -> DiversityReport {
    let stats = CorpusStatistics::from_corpus(corpus);
    let rows = labels
        .iter()
        .filter(|l| !l.is_sentinel())
        .filter_map(|&label| {
            let spans = stats.labels.get(&label).map_or(0, |s| s.span_count);
            (spans > 0).then(|| LabelDiversity {
                label,
                spans,
                top_words: tfidf_rank(&stats, label, cfg.top_k),
                explicit_mention_rate: explicit_mention_rate(corpus, label),
                mean_jaccard: jaccard_similarity(corpus, label, cfg.pair_budget, cfg.seed),
            })
        })
        .collect();
    DiversityReport {
        label_word_policy: "factor name split on underscores; polarity words excluded".to_string(),
        top_k: cfg.top_k,
        pair_budget: cfg.pair_budget,
        labels: rows,
    }
}

/// Plain-text table: one row per label with its top words and prevalence.
pub fn render_report(report: &DiversityReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# label words: {}", report.label_word_policy);
    let _ = writeln!(
        out,
        "{:<50} {:>6} {:>8} {:>8}  top words (prevalence %)",
        "label", "spans", "explicit", "jaccard"
    );
    for row in &report.labels {
        let words: Vec<String> = row
            .top_words
            .iter()
            .map(|w| format!("{} ({:.0})", w.word, 100.0 * w.prevalence))
            .collect();
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let _ = writeln!(
            out,
            "{:<50} {:>6} {:>8} {:>8}  {}",
            row.label.display_name(),
            row.spans,
            fmt_opt(row.explicit_mention_rate),
            fmt_opt(row.mean_jaccard),
            words.join(", ")
        );
    }
    out
}
