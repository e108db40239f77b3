use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::StageReport;
use crate::corpus::{AnnotatedSentence, Partition};
use crate::{text, Error};

/// note id → partition.
pub type SplitManifest = BTreeMap<String, Partition>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub manifest: SplitManifest,
}

/// Note-level split. Note ids are sorted, shuffled with `seed`, and cut into
/// round(p_train·n) train notes, round(p_dev·n) dev notes and the rest test.
/// Sentence order within each partition follows the input.
pub fn split(
    corpus: Vec<AnnotatedSentence>,
    proportions: [f64; 3],
    seed: u64,
) -> Result<(DatasetSplit, StageReport), Error> {
    let total: f64 = proportions.iter().sum();
    if proportions.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split proportions must be non-negative and sum to 1, got {proportions:?}")));
    }
    let notes: BTreeSet<&str> = corpus.iter().map(|s| s.note_id.as_str()).collect();
    if notes.len() < 3 {
        return Err(Error::InvalidInput(format!("cannot split {} note(s); at least 3 are required", notes.len())));
    }
    let mut order: Vec<String> = notes.into_iter().map(str::to_string).collect();
    order.shuffle(&mut text::derive_rng(seed, &["split"]));
    let n = order.len();
    let n_train = ((proportions[0] * n as f64).round() as usize).min(n);
    let n_dev = ((proportions[1] * n as f64).round() as usize).min(n - n_train);
    let manifest: SplitManifest = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let p = if i < n_train {
                Partition::Train
            } else if i < n_train + n_dev {
                Partition::Dev
            } else {
                Partition::Test
            };
            (id, p)
        })
        .collect();

    let report = StageReport::begin("split", &corpus);
    let mut out = DatasetSplit { train: Vec::new(), dev: Vec::new(), test: Vec::new(), manifest };
    for mut s in corpus {
        let p = out.manifest[&s.note_id];
        s.provenance.partition = Some(p);
        match p {
            Partition::Train => out.train.push(s),
            Partition::Dev => out.dev.push(s),
            Partition::Test => out.test.push(s),
        }
    }
    let mut report = report;
    let count = |p: Partition| out.manifest.values().filter(|v| **v == p).count();
    report.detail("notes", BTreeMap::from([("train", count(Partition::Train)), ("dev", count(Partition::Dev)), ("test", count(Partition::Test))]));
    report.detail(
        "sentences",
        BTreeMap::from([("train", out.train.len()), ("dev", out.dev.len()), ("test", out.test.len())]),
    );
    let all: Vec<AnnotatedSentence> = out.train.iter().chain(&out.dev).chain(&out.test).cloned().collect();
    let report = report.finish(&all);
    Ok((out, report))
}
