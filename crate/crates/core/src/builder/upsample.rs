use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::StageReport;
use crate::analytics::is_explicit_mention;
use crate::corpus::AnnotatedSentence;
use crate::schema::Label;
use crate::{text, Error};

fn diverse_labels(s: &AnnotatedSentence) -> Vec<Label> {
    s.annotations
        .iter()
        .filter(|a| !is_explicit_mention(s.span_text(a), a.label))
        .map(|a| a.label)
        .collect()
}

/// Duplicates sentences holding spans that do not name their label, until
/// each label's count of such spans reaches `multiplier` times its original
/// count. Each round duplicates a sentence at most once, visiting candidates
/// in a seeded random order, so fractional multipliers pick a random subset.
/// Copies follow their original and carry `duplicate_of` and a copy number.
pub fn upsample_diverse(
    corpus: Vec<AnnotatedSentence>,
    multiplier: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedSentence>, StageReport), Error> {
    if !(multiplier >= 1.0) || !multiplier.is_finite() {
        return Err(Error::InvalidInput(format!("upsample multiplier must be >= 1, got {multiplier}")));
    }
    let mut report = StageReport::begin("upsample", &corpus);
    let diverse: Vec<Vec<Label>> = corpus.iter().map(diverse_labels).collect();
    let mut original: BTreeMap<Label, usize> = BTreeMap::new();
    for labels in &diverse {
        for l in labels {
            *original.entry(*l).or_insert(0) += 1;
        }
    }
    let target: BTreeMap<Label, usize> =
        original.iter().map(|(l, &c)| (*l, (c as f64 * multiplier).round() as usize)).collect();
    let mut current = original.clone();

    let mut without_diverse: Vec<String> = report
        .labels_before
        .keys()
        .filter(|l| !original.contains_key(l))
        .map(|l| l.to_string())
        .collect();
    without_diverse.sort();
    for l in &without_diverse {
        log::warn!("label {l} has no diverse spans; not upsampled");
    }

    let candidates: Vec<usize> = (0..corpus.len()).filter(|&i| !diverse[i].is_empty()).collect();
    let rounds = (multiplier.ceil() as u32).saturating_sub(1);
    let mut copies: Vec<u32> = vec![0; corpus.len()];
    let mut rng = text::derive_rng(seed, &["upsample"]);
    for _ in 0..rounds {
        let needs = |current: &BTreeMap<Label, usize>, l: &Label| current[l] < target[l];
        if !original.keys().any(|l| needs(&current, l)) {
            break;
        }
        let mut order = candidates.clone();
        order.shuffle(&mut rng);
        for i in order {
            if diverse[i].iter().any(|l| needs(&current, l)) {
                copies[i] += 1;
                for l in &diverse[i] {
                    *current.get_mut(l).unwrap() += 1;
                }
            }
        }
    }

    let mut added = 0usize;
    let mut duplicated = 0usize;
    let mut out = Vec::with_capacity(corpus.len() + copies.iter().sum::<u32>() as usize);
    for (s, n) in corpus.into_iter().zip(copies) {
        let key = s.key();
        let mut dups = Vec::with_capacity(n as usize);
        for c in 1..=n {
            let mut d = s.clone();
            d.provenance.copy = c;
            d.provenance.duplicate_of = Some(key.clone());
            d.provenance.mark("upsampled");
            added += d.annotations.len();
            duplicated += 1;
            dups.push(d);
        }
        out.push(s);
        out.extend(dups);
    }
    report.annotations_added = added;
    report.detail("multiplier", multiplier);
    report.detail("duplicated_sentences", duplicated);
    report.detail("diverse_before", &original);
    report.detail("diverse_after", &current);
    report.detail("labels_without_diverse_spans", without_diverse);
    let report = report.finish(&out);
    Ok((out, report))
}
