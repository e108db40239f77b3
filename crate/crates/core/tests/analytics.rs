mod common;

use std::collections::HashMap;

use factorspan_core::analytics::{
    diversity_report, jaccard, lemma_set, mean_pairwise_jaccard, tfidf_rank, AnalyticsConfig, CorpusStatistics,
};
use factorspan_core::{Label, SchemaVersion};
use proptest::prelude::*;

const VOCAB: &[&str] = &["low", "mood", "sleep", "poor", "abuse", "father", "drinks", "daily", "denies", "hopeless", "work", "pain"];

fn spans_strategy() -> impl Strategy<Value = Vec<(usize, Vec<usize>)>> {
    prop::collection::vec((0usize..4, prop::collection::vec(0..VOCAB.len(), 1..6)), 1..40)
}

fn materialise(spans: &[(usize, Vec<usize>)]) -> Vec<(Label, String)> {
    let labels = common::factor_labels(SchemaVersion::V2);
    spans
        .iter()
        .map(|(l, ws)| (labels[*l], ws.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ")))
        .collect()
}

/// Scores straight from the span word lists.
fn brute_force(spans: &[(Label, String)], label: Label) -> Vec<(String, f64)> {
    let mut w_l: HashMap<&str, u64> = HashMap::new();
    let mut w: HashMap<&str, u64> = HashMap::new();
    let mut total = 0u64;
    for (l, text) in spans {
        for word in text.split(' ') {
            *w.entry(word).or_default() += 1;
            if *l == label {
                *w_l.entry(word).or_default() += 1;
                total += 1;
            }
        }
    }
    let mut out: Vec<(String, f64)> = w_l
        .iter()
        .map(|(word, &c)| {
            let tf = c as f64 / total as f64;
            let idf = (w[word] as f64 / c as f64 + 1.0).ln();
            (word.to_string(), tf / idf)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

fn stats_of(spans: &[(Label, String)]) -> CorpusStatistics {
    CorpusStatistics::from_spans(spans.iter().map(|(l, s)| (*l, s.as_str())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ranking_matches_brute_force(raw in spans_strategy()) {
        let spans = materialise(&raw);
        let stats = stats_of(&spans);
        // Compared position by position: near-equal scores could in principle
        // swap, but integer counts over a small vocabulary tie exactly.
        for label in stats.labels.keys() {
            let want = brute_force(&spans, *label);
            let got = tfidf_rank(&stats, *label, usize::MAX);
            prop_assert_eq!(got.len(), want.len());
            for (g, (word, score)) in got.iter().zip(&want) {
                let rel = (g.score - score).abs() / score.abs().max(f64::MIN_POSITIVE);
                prop_assert!(rel <= 1e-12, "{} {} vs {}", word, g.score, score);
                prop_assert!((0.0..=1.0).contains(&g.prevalence));
            }
        }
    }

    #[test]
    fn counts_are_consistent(raw in spans_strategy()) {
        let stats = stats_of(&materialise(&raw));
        for (word, &w) in &stats.global {
            let sum: u64 = stats.labels.values().map(|ls| ls.word_freq.get(word).copied().unwrap_or(0)).sum();
            prop_assert_eq!(sum, w);
        }
        for ls in stats.labels.values() {
            prop_assert_eq!(ls.total_words, ls.word_freq.values().sum::<u64>());
            for (word, &c) in &ls.spans_containing {
                prop_assert!(c <= ls.span_count && c <= ls.word_freq[word]);
            }
        }
    }

    #[test]
    fn repeating_the_corpus_leaves_rankings_unchanged(raw in spans_strategy()) {
        let spans = materialise(&raw);
        let stats = stats_of(&spans);
        for k in [2u64, 3, 10] {
            let repeated: Vec<(Label, String)> = (0..k).flat_map(|_| spans.iter().cloned()).collect();
            let big = stats_of(&repeated);
            prop_assert_eq!(&big, &stats.scaled(k));
            for label in stats.labels.keys() {
                prop_assert_eq!(tfidf_rank(&stats, *label, 5), tfidf_rank(&big, *label, 5));
            }
        }
    }

    #[test]
    fn jaccard_is_a_bounded_symmetric_similarity(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
        let (sa, sb) = (lemma_set(&a), lemma_set(&b));
        let j = jaccard(&sa, &sb);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&sb, &sa));
        if !sa.is_empty() {
            prop_assert_eq!(jaccard(&sa, &sa), 1.0);
        }
    }
}

#[test]
fn sampled_mean_jaccard_tracks_the_exact_mean() {
    let corpus = common::corpus(5, 40, SchemaVersion::V2);
    let sets: Vec<_> = corpus.iter().flat_map(|s| s.annotations.iter().map(|a| lemma_set(s.span_text(a)))).collect();
    let n = sets.len();
    let exact = mean_pairwise_jaccard(&sets, usize::MAX, 0).unwrap();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += jaccard(&sets[i], &sets[j]);
        }
    }
    assert!((exact - sum / (n * (n - 1) / 2) as f64).abs() < 1e-12);
    let sampled = mean_pairwise_jaccard(&sets, 2_000, 3).unwrap();
    assert!((sampled - exact).abs() < 0.03, "{sampled} vs {exact}");
}

#[test]
fn diversity_report_is_deterministic() {
    let corpus = common::corpus(9, 30, SchemaVersion::V2);
    let labels = factorspan_core::schema::label_space(SchemaVersion::V2);
    let cfg = AnalyticsConfig { top_k: 3, pair_budget: 500, seed: 4 };
    let a = diversity_report(&corpus, &labels, &cfg);
    assert_eq!(a, diversity_report(&corpus, &labels, &cfg));
    assert!(!a.labels.is_empty());
}
