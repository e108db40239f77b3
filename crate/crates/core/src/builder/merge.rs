use super::StageReport;
use crate::corpus::AnnotatedSentence;
use crate::genclient::RawNote;
use crate::parser::extract_annotations;

/// Replaces the corpus's unannotated sentences with generated no-label
/// sentences. A generated sentence carrying any accepted label token is
/// rejected; unrecognised tokens are stripped like in parsing.
pub fn merge_no_label(corpus: Vec<AnnotatedSentence>, generated: &[RawNote]) -> (Vec<AnnotatedSentence>, StageReport) {
    let mut report = StageReport::begin("merge_no_label", &corpus);
    let before = corpus.len();
    let mut out: Vec<AnnotatedSentence> = corpus.into_iter().filter(|s| !s.annotations.is_empty()).collect();
    let dropped = before - out.len();
    let mut appended = 0usize;
    let mut rejected = Vec::new();
    for raw in generated {
        let ex = extract_annotations(raw.text.trim());
        if ex.tokens.iter().any(|t| t.result.is_ok()) {
            rejected.push(raw.id.clone());
            continue;
        }
        if !ex.text.chars().any(char::is_alphanumeric) {
            rejected.push(raw.id.clone());
            continue;
        }
        let mut s = AnnotatedSentence::new(raw.id.clone(), 0, ex.text);
        s.provenance.mark("no_label");
        out.push(s);
        appended += 1;
    }
    if !rejected.is_empty() {
        log::warn!("{} generated no-label sentence(s) rejected", rejected.len());
    }
    report.detail("dropped_unannotated", dropped);
    report.detail("appended", appended);
    report.detail("rejected", rejected.len());
    report.detail("rejected_ids", rejected);
    let report = report.finish(&out);
    (out, report)
}
