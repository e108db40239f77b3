//! Per-class precision/recall/F1, grouped macro averages and confusion
//! matrices for sentence-level label predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::schema::{collapse_polarity, FactorDomain, FactorLabel, Label, Polarity, Schema, SchemaVersion};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchCriterion {
    /// Compare the sets of labels of each sentence.
    LabelSet,
    /// A predicted span matches a gold span with the same label whose
    /// character Jaccard overlap is at least `threshold`.
    SpanOverlap { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    pub confidence: f64,
}

/// Model output for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// [`AnnotatedSentence::key`] of the sentence.
    pub key: String,
    pub labels: Vec<ScoredLabel>,
    #[serde(default)]
    pub spans: Vec<PredictedSpan>,
}

impl Prediction {
    /// Factor labels whose confidence exceeds `tau`; the sentinel when none
    /// does. Sentinel entries in `labels` are ignored.
    pub fn label_set(&self, tau: f64) -> BTreeSet<Label> {
        let set: BTreeSet<Label> =
            self.labels.iter().filter(|s| !s.label.is_sentinel() && s.confidence > tau).map(|s| s.label).collect();
        if set.is_empty() {
            BTreeSet::from([Label::NoAnnotation])
        } else {
            set
        }
    }

    pub fn spans_above(&self, tau: f64) -> Vec<PredictedSpan> {
        self.spans.iter().filter(|s| !s.label.is_sentinel() && s.confidence > tau).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub criterion: MatchCriterion,
    pub tau: f64,
    pub collapsed: bool,
    pub min_support: usize,
    pub schema_version: SchemaVersion,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            criterion: MatchCriterion::LabelSet,
            tau: 0.0,
            collapsed: false,
            min_support: 2,
            schema_version: SchemaVersion::V2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    /// Support below the minimum; kept in the table, left out of group means.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub members: usize,
}

/// Rows are gold classes, columns predicted classes. Predictions that pair
/// with no gold label are counted in `spurious`, so each row sums to the
/// class's gold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<f64>>,
    pub spurious: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// ln(1 + count), the scale used for rendering.
    pub fn log_scaled(&self) -> Vec<Vec<f64>> {
        self.counts.iter().map(|r| r.iter().map(|c| c.ln_1p()).collect()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out.push_str("(spurious)");
        for v in &self.spurious {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        out
    }

    /// Text heatmap of the log-scaled counts, one shade per cell.
    pub fn render_log_heatmap(&self) -> String {
        const SHADES: [char; 5] = [' ', '░', '▒', '▓', '█'];
        let scaled = self.log_scaled();
        let max = scaled.iter().flatten().copied().fold(0.0, f64::max);
        let mut out = String::new();
        for (c, row) in self.classes.iter().zip(&scaled) {
            let cells: String = row
                .iter()
                .map(|v| if max > 0.0 { SHADES[((v / max) * 4.0).round() as usize] } else { ' ' })
                .collect();
            let _ = writeln!(out, "{c:>45} |{cells}|");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub sentences: usize,
    pub classes: Vec<ClassRow>,
    pub groups: Vec<GroupRow>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassRow> {
        self.classes.iter().find(|c| c.class == name)
    }

    pub fn group(&self, name: &str) -> Option<&GroupRow> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Macro F1 of the "All" group.
    pub fn macro_f1(&self) -> f64 {
        self.group("All").map_or(0.0, |g| g.f1)
    }
}

#[derive(Debug, Clone)]
struct ClassInfo {
    name: String,
    polarity: Option<Polarity>,
    domain: Option<FactorDomain>,
}

struct Classes {
    info: Vec<ClassInfo>,
    index: BTreeMap<String, usize>,
    collapsed: bool,
}

impl Classes {
    fn new(version: SchemaVersion, collapsed: bool) -> Classes {
        let info: Vec<ClassInfo> = if collapsed {
            std::iter::once(FactorLabel::NoAnnotation)
                .chain(version.factors().into_iter().map(FactorLabel::Factor))
                .map(|f| ClassInfo {
                    name: f.to_string(),
                    polarity: None,
                    domain: match f {
                        FactorLabel::Factor(x) => Some(x.domain()),
                        FactorLabel::NoAnnotation => None,
                    },
                })
                .collect()
        } else {
            Schema::new(version)
                .labels()
                .iter()
                .map(|l| ClassInfo {
                    name: l.to_string(),
                    polarity: l.polarity(),
                    domain: l.factor().map(|f| f.domain()),
                })
                .collect()
        };
        let index = info.iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect();
        Classes { info, index, collapsed }
    }

    fn of(&self, label: Label) -> Option<usize> {
        let name = if self.collapsed { collapse_polarity(label).to_string() } else { label.to_string() };
        self.index.get(&name).copied()
    }

    fn set(&self, labels: impl IntoIterator<Item = Label>) -> Result<BTreeSet<usize>, Error> {
        labels
            .into_iter()
            .map(|l| {
                self.of(l).ok_or_else(|| Error::SchemaMismatch {
                    expected: format!("a label of schema {}", self.version_hint()),
                    found: l.to_string(),
                })
            })
            .collect()
    }

    fn version_hint(&self) -> String {
        format!("with {} classes", self.info.len())
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: f64,
    fp: f64,
    fn_: f64,
    support: usize,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn char_jaccard(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scores predictions against the gold corpus. Predictions are paired with
/// gold sentences by key; both sides must cover the same sentences.
pub fn evaluate(predictions: &[Prediction], gold: &[AnnotatedSentence], cfg: &EvalConfig) -> Result<EvalReport, Error> {
    if let MatchCriterion::SpanOverlap { threshold } = cfg.criterion {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidInput(format!("span overlap threshold must be in (0, 1], got {threshold}")));
        }
    }
    let classes = Classes::new(cfg.schema_version, cfg.collapsed);
    let by_key: BTreeMap<&str, &Prediction> = predictions.iter().map(|p| (p.key.as_str(), p)).collect();
    if by_key.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} prediction(s) for {} gold sentence(s)",
            by_key.len(),
            gold.len()
        )));
    }
    let k = classes.info.len();
    let mut counts = vec![Counts::default(); k];
    let mut matrix = vec![vec![0.0; k]; k];
    let mut spurious = vec![0.0; k];
    let sentinel = 0;

    for g in gold {
        let key = g.key();
        let p = by_key
            .get(key.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for sentence {key}")))?;
        let gold_set = classes.set(g.label_set())?;
        let pred_set = classes.set(p.label_set(cfg.tau))?;
        for &c in &gold_set {
            counts[c].support += 1;
        }
        accumulate_confusion(&gold_set, &pred_set, &mut matrix, &mut spurious, sentinel);
        match cfg.criterion {
            MatchCriterion::LabelSet => {
                for &c in gold_set.union(&pred_set) {
                    match (gold_set.contains(&c), pred_set.contains(&c)) {
                        (true, true) => counts[c].tp += 1.0,
                        (true, false) => counts[c].fn_ += 1.0,
                        (false, true) => counts[c].fp += 1.0,
                        (false, false) => {}
                    }
                }
            }
            MatchCriterion::SpanOverlap { threshold } => {
                let gold_spans: Vec<((usize, usize), usize)> = g
                    .annotations
                    .iter()
                    .map(|a| Ok(((a.start, a.end), classes.set([a.label])?.into_iter().next().unwrap())))
                    .collect::<Result<_, Error>>()?;
                let pred_spans: Vec<((usize, usize), usize)> = p
                    .spans_above(cfg.tau)
                    .iter()
                    .map(|s| Ok(((s.start, s.end), classes.set([s.label])?.into_iter().next().unwrap())))
                    .collect::<Result<_, Error>>()?;
                if gold_spans.is_empty() && pred_spans.is_empty() {
                    counts[sentinel].tp += 1.0;
                    continue;
                }
                if gold_spans.is_empty() {
                    counts[sentinel].fn_ += 1.0;
                }
                if pred_spans.is_empty() {
                    counts[sentinel].fp += 1.0;
                }
                let mut used = vec![false; pred_spans.len()];
                for &(gs, gc) in &gold_spans {
                    let best = pred_spans
                        .iter()
                        .enumerate()
                        .filter(|(j, (_, pc))| !used[*j] && *pc == gc)
                        .map(|(j, (ps, _))| (j, char_jaccard(gs, *ps)))
                        .filter(|(_, o)| *o >= threshold)
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                    match best {
                        Some((j, _)) => {
                            used[j] = true;
                            counts[gc].tp += 1.0;
                        }
                        None => counts[gc].fn_ += 1.0,
                    }
                }
                for (j, (_, pc)) in pred_spans.iter().enumerate() {
                    if !used[j] {
                        counts[*pc].fp += 1.0;
                    }
                }
            }
        }
    }

    let rows: Vec<ClassRow> = classes
        .info
        .iter()
        .zip(&counts)
        .map(|(info, c)| {
            let (precision, pu) = ratio(c.tp, c.tp + c.fp);
            let (recall, ru) = ratio(c.tp, c.tp + c.fn_);
            ClassRow {
                class: info.name.clone(),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                support: c.support,
                precision,
                recall,
                f1: f1(precision, recall),
                precision_undefined: pu,
                recall_undefined: ru,
                excluded: c.support < cfg.min_support,
            }
        })
        .collect();
    let groups = group_rows(&classes.info, &rows, None);
    Ok(EvalReport {
        config: cfg.clone(),
        sentences: gold.len(),
        classes: rows,
        groups,
        confusion: ConfusionMatrix { classes: classes.info.iter().map(|c| c.name.clone()).collect(), counts: matrix, spurious },
    })
}

fn accumulate_confusion(
    gold: &BTreeSet<usize>,
    pred: &BTreeSet<usize>,
    matrix: &mut [Vec<f64>],
    spurious: &mut [f64],
    sentinel: usize,
) {
    let unmatched: Vec<usize> = gold.difference(pred).copied().collect();
    let surplus: Vec<usize> = pred.difference(gold).copied().collect();
    for &c in gold.intersection(pred) {
        matrix[c][c] += 1.0;
    }
    for &g in &unmatched {
        if surplus.is_empty() {
            matrix[g][sentinel] += 1.0;
        } else {
            let share = 1.0 / surplus.len() as f64;
            for &p in &surplus {
                matrix[g][p] += share;
            }
        }
    }
    if unmatched.is_empty() {
        for &p in &surplus {
            spurious[p] += 1.0;
        }
    }
}

/// Unweighted means over member classes with enough support. The sentinel
/// has no polarity or domain, so it only counts towards "All"; groups with no
/// possible member (polarity rows when collapsed) are omitted.
fn group_rows(info: &[ClassInfo], rows: &[ClassRow], subset: Option<&BTreeSet<usize>>) -> Vec<GroupRow> {
    let in_scope = |i: usize| subset.is_none_or(|s| s.contains(&i)) && !rows[i].excluded;
    type Pred<'a> = Box<dyn Fn(&ClassInfo) -> bool + 'a>;
    let defs: Vec<(&str, Pred)> = vec![
        ("POSITIVE", Box::new(|c: &ClassInfo| c.polarity == Some(Polarity::Positive))),
        ("NEGATIVE", Box::new(|c: &ClassInfo| c.polarity == Some(Polarity::Negative))),
        ("PATIENT", Box::new(|c: &ClassInfo| c.domain == Some(FactorDomain::Patient))),
        ("ILLNESS", Box::new(|c: &ClassInfo| c.domain == Some(FactorDomain::Illness))),
        ("TREATMENT", Box::new(|c: &ClassInfo| c.domain == Some(FactorDomain::Treatment))),
        ("All", Box::new(|_: &ClassInfo| true)),
    ];
    let mut out = Vec::new();
    for (name, member) in defs {
        let idx: Vec<usize> = (0..info.len()).filter(|&i| in_scope(i) && member(&info[i])).collect();
        let any_member = (0..info.len()).any(|i| member(&info[i]) && subset.is_none_or(|s| s.contains(&i)));
        if !any_member {
            continue;
        }
        let n = idx.len() as f64;
        let mean = |f: &dyn Fn(&ClassRow) -> f64| if idx.is_empty() { 0.0 } else { idx.iter().map(|&i| f(&rows[i])).sum::<f64>() / n };
        out.push(GroupRow {
            group: name.to_string(),
            precision: mean(&|r| r.precision),
            recall: mean(&|r| r.recall),
            f1: mean(&|r| r.f1),
            support: idx.iter().map(|&i| rows[i].support).sum(),
            members: idx.len(),
        });
    }
    out
}

/// Report restricted to `subset` after applying `tau`: per-class rows of the
/// subset only, group means recomputed over it.
pub fn high_confidence_report(
    predictions: &[Prediction],
    gold: &[AnnotatedSentence],
    tau: f64,
    subset: &[Label],
    cfg: &EvalConfig,
) -> Result<EvalReport, Error> {
    let cfg = EvalConfig { tau, ..cfg.clone() };
    let full = evaluate(predictions, gold, &cfg)?;
    let classes = Classes::new(cfg.schema_version, cfg.collapsed);
    let keep: BTreeSet<usize> = classes.set(subset.iter().copied())?;
    let groups = group_rows(&classes.info, &full.classes, Some(&keep));
    let rows = full.classes.iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, r)| r.clone()).collect();
    Ok(EvalReport { classes: rows, groups, ..full })
}

/// Default classes of the high-confidence report.
pub fn default_high_confidence_subset() -> Vec<Label> {
    use crate::schema::Factor;
    [Factor::Abuse, Factor::FamilyMemberMentalDisorder, Factor::SevereIllness, Factor::Suicidality]
        .into_iter()
        .map(|f| Label::new(f, Polarity::Positive))
        .collect()
}

/// Aligned plain-text table: one row per class, then the group rows.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "criterion={:?} tau={} collapsed={} min_support={} sentences={}",
        report.config.criterion, report.config.tau, report.config.collapsed, report.config.min_support, report.sentences
    );
    let _ = writeln!(out, "{:<48} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "n");
    for r in &report.classes {
        let mark = if r.excluded { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<48} {:>9.2} {:>9.2} {:>9.2} {:>8}{mark}",
            r.class, r.precision, r.recall, r.f1, r.support
        );
    }
    let _ = writeln!(out, "{}", "-".repeat(87));
    for g in &report.groups {
        let _ = writeln!(
            out,
            "{:<48} {:>9.2} {:>9.2} {:>9.2} {:>8}",
            g.group, g.precision, g.recall, g.f1, g.support
        );
    }
    let _ = writeln!(out, "* support below {}; excluded from group means", report.config.min_support);
    out
}
