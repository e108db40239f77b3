//! Inline-annotated note parsing.
//!
//! Notes arrive with label tokens written directly after the text they
//! annotate, e.g. `XXXXX [label_X] YYYYY [label_Y]`. Each token claims the
//! text between the previous token (or the sentence start) and itself; text
//! after the last token stays unannotated. Tokens are removed from the
//! sentence and offsets refer to the cleaned text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, SpanAnnotation};
use crate::genclient::RawNote;
use crate::schema::{migrate_label, parse_label_body, Label, Rejection, SchemaVersion};

/// One segmented sentence. `offset` is the char index of `text` in the note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub offset: usize,
    pub section: Option<String>,
}

const ABBREVIATIONS: &[&str] = &[
    "y.o.", "yo.", "e.g.", "i.e.", "etc.", "vs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "approx.", "no.",
    "mg.", "ml.", "b.d.", "t.d.s.", "o.d.", "o.n.", "p.r.n.", "prn.", "nr.", "fig.", "hx.", "dx.", "tx.", "pt.",
    "yrs.", "wks.", "mths.", "mins.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.",
];

fn is_section_header(line: &str) -> bool {
    let t = line.trim();
    let Some(body) = t.strip_suffix(':') else {
        return false;
    };
    let words = body.split_whitespace().count();
    (1..=6).contains(&words)
        && body.chars().next().is_some_and(char::is_uppercase)
        && !body.contains(['[', ']', '.', ':'])
}

/// Splits a note into sentences.
///
/// Boundaries are sentence-final `.`, `!` or `?` (optionally followed by
/// closing quotes or brackets) followed by whitespace and an uppercase letter
/// or digit, outside any `[...]` group, and not ending a known abbreviation.
/// Lines of the form `Section name:` become section tags and blank lines end
/// paragraphs.
pub fn segment_sentences(note: &str) -> Vec<Segment> {
    let chars: Vec<char> = note.chars().collect();
    let mut segments = Vec::new();
    let mut section: Option<String> = None;

    // Walk lines, grouping non-header, non-blank lines into paragraphs.
    let mut line_start = 0usize;
    let mut para_start: Option<usize> = None;
    let mut i = 0usize;
    while i <= chars.len() {
        if i == chars.len() || chars[i] == '\n' {
            let line: String = chars[line_start..i].iter().collect();
            let blank = line.trim().is_empty();
            let header = !blank && is_section_header(&line);
            if blank || header {
                if let Some(ps) = para_start.take() {
                    split_paragraph(&chars, ps, line_start, section.as_deref(), &mut segments);
                }
                if header {
                    section = Some(line.trim().trim_end_matches(':').trim().to_string());
                }
            } else if para_start.is_none() {
                para_start = Some(line_start);
            }
            line_start = i + 1;
        }
        i += 1;
    }
    if let Some(ps) = para_start {
        split_paragraph(&chars, ps, chars.len(), section.as_deref(), &mut segments);
    }
    segments
}

fn split_paragraph(chars: &[char], start: usize, end: usize, section: Option<&str>, out: &mut Vec<Segment>) {
    let mut depth = 0usize;
    let mut sent_start = start;
    let mut i = start;
    while i < end {
        let c = chars[i];
        match c {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            '.' | '!' | '?' if depth == 0 => {
                let mut j = i + 1;
                while j < end && matches!(chars[j], '"' | '\'' | ')' | '.' | '!' | '?') {
                    j += 1;
                }
                let boundary = j < end
                    && chars[j].is_whitespace()
                    && next_non_space(chars, j, end).is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
                    && !(c == '.' && ends_with_abbreviation(chars, sent_start, i + 1));
                if boundary {
                    push_segment(chars, sent_start, j, section, out);
                    sent_start = j;
                    i = j;
                    continue;
                }
            }
            _ => {}
        }
        i += 1;
    }
    push_segment(chars, sent_start, end, section, out);
}

fn next_non_space(chars: &[char], from: usize, end: usize) -> Option<char> {
    chars[from..end].iter().copied().find(|c| !c.is_whitespace())
}

fn ends_with_abbreviation(chars: &[char], sent_start: usize, end: usize) -> bool {
    let mut k = end;
    while k > sent_start && !chars[k - 1].is_whitespace() {
        k -= 1;
    }
    let word: String = chars[k..end].iter().flat_map(|c| c.to_lowercase()).collect();
    let word = word.trim_start_matches(['(', '"', '\'']);
    ABBREVIATIONS.contains(&word)
}

fn push_segment(chars: &[char], start: usize, end: usize, section: Option<&str>, out: &mut Vec<Segment>) {
    let mut s = start;
    let mut e = end;
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s < e {
        out.push(Segment { text: chars[s..e].iter().collect(), offset: s, section: section.map(str::to_string) });
    }
}

/// A label token found in a sentence and what became of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenOutcome {
    pub token: String,
    pub result: Result<Label, Rejection>,
}

/// Cleaned sentence plus the outcome of every label token it contained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub text: String,
    pub annotations: Vec<SpanAnnotation>,
    pub tokens: Vec<TokenOutcome>,
}

enum Piece {
    Text(Vec<char>),
    /// A bracket group; one entry per comma-separated part.
    Token(Vec<(String, Result<Label, Rejection>)>),
}

fn split_pieces(sentence: &str) -> Vec<Piece> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut pieces = Vec::new();
    let mut text = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '[' => {
                // Find the matching close bracket, allowing nesting.
                let mut depth = 0usize;
                let mut close = None;
                for (k, &c) in chars.iter().enumerate().skip(i) {
                    if c == '[' {
                        depth += 1;
                    } else if c == ']' {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(k);
                            break;
                        }
                    }
                }
                let (body_end, next) = match close {
                    Some(k) => (k, k + 1),
                    None => {
                        // Unclosed: swallow the following non-space run.
                        let mut k = i + 1;
                        while k < chars.len() && !chars[k].is_whitespace() {
                            k += 1;
                        }
                        (k, k)
                    }
                };
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                let raw: String = chars[i..next].iter().collect();
                let body: String = chars[i + 1..body_end].iter().collect();
                let parts = if close.is_none() || body.contains(['[', ']']) {
                    vec![(raw, Err(Rejection::Malformed))]
                } else {
                    body.split(',')
                        .map(|part| (format!("[{}]", part.trim()), parse_label_body(part)))
                        .collect()
                };
                pieces.push(Piece::Token(parts));
                i = next;
            }
            ']' => {
                pieces.push(Piece::Text(std::mem::take(&mut text)));
                pieces.push(Piece::Token(vec![("]".to_string(), Err(Rejection::Malformed))]));
                i += 1;
            }
            c => {
                text.push(c);
                i += 1;
            }
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

fn has_content(chars: &[char]) -> bool {
    chars.iter().any(|c| c.is_alphanumeric())
}

/// Applies the prefix-span heuristic to one sentence.
///
/// Whitespace left behind by a removed token is collapsed, so
/// `female [T] who` becomes `female who` and `disorder [T].` becomes
/// `disorder.`; all other whitespace runs are collapsed to one space.
pub fn extract_annotations(sentence: &str) -> Extraction {
    let pieces = split_pieces(sentence);
    let mut out: Vec<char> = Vec::new();
    let mut tokens = Vec::new();
    let mut annotations: Vec<SpanAnnotation> = Vec::new();
    let mut last_cut = 0usize;
    // Extent of the most recent token if it produced an annotation.
    let mut last_span: Option<(usize, usize)> = None;
    let mut after_token = false;

    for piece in pieces {
        match piece {
            Piece::Text(chars) => {
                let mut iter = chars.into_iter().peekable();
                if after_token
                    && out.last().is_some_and(|c| !c.is_whitespace())
                    && iter.peek().is_some_and(|c| c.is_alphanumeric())
                {
                    // Token glued two words together: keep them apart.
                    out.push(' ');
                }
                after_token = false;
                for c in iter {
                    if c.is_whitespace() {
                        if out.last().is_some_and(|l| *l != ' ') {
                            out.push(' ');
                        }
                    } else {
                        out.push(c);
                    }
                }
            }
            Piece::Token(parts) => {
                while out.last() == Some(&' ') {
                    out.pop();
                }
                let cut = out.len();
                let region = if cut > last_cut { &out[last_cut..cut] } else { &[][..] };
                let extent = if has_content(region) {
                    let mut s = last_cut;
                    let mut e = cut;
                    while s < e && out[s].is_whitespace() {
                        s += 1;
                    }
                    while e > s && out[e - 1].is_whitespace() {
                        e -= 1;
                    }
                    Some((s, e))
                } else {
                    // Adjacent tokens share the previous token's text.
                    last_span
                };
                let mut produced = false;
                for (raw, result) in parts {
                    let result = match (result, extent) {
                        (Ok(label), Some((s, e))) => {
                            annotations.push(SpanAnnotation::new(s, e, label));
                            produced = true;
                            Ok(label)
                        }
                        (Ok(_), None) => Err(Rejection::EmptySpan),
                        (Err(r), _) => Err(r),
                    };
                    tokens.push(TokenOutcome { token: raw, result });
                }
                last_span = if produced { extent } else { None };
                last_cut = cut;
                after_token = true;
            }
        }
    }
    while out.last() == Some(&' ') {
        out.pop();
    }
    // Leading whitespace can only come from a token at sentence start.
    let lead = out.iter().take_while(|c| c.is_whitespace()).count();
    if lead > 0 {
        out.drain(..lead);
        for a in &mut annotations {
            a.start -= lead;
            a.end -= lead;
        }
    }
    Extraction { text: out.into_iter().collect(), annotations, tokens }
}

/// Re-inserts label tokens after each annotation. Re-extracting the result
/// gives back the same text, labels and span ends; a span start can move
/// left where the original had a rejected token or content-free text between
/// two tokens of one extent. Rendering an already re-extracted sentence is
/// an exact round trip.
pub fn render_inline(sentence: &AnnotatedSentence) -> String {
    let chars: Vec<char> = sentence.text.chars().collect();
    let mut by_end: BTreeMap<usize, Vec<Label>> = BTreeMap::new();
    for a in &sentence.annotations {
        by_end.entry(a.end).or_default().push(a.label);
    }
    let mut out = String::new();
    let mut pos = 0;
    for (end, labels) in by_end {
        out.extend(&chars[pos..end]);
        for l in labels {
            if let Some(t) = l.to_token() {
                out.push(' ');
                out.push_str(&t);
            }
        }
        pos = end;
    }
    out.extend(&chars[pos..]);
    out
}

/// Counts gathered while parsing; merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub notes: usize,
    pub sentences: usize,
    pub total_tokens: usize,
    pub accepted: BTreeMap<Label, usize>,
    pub rejected: BTreeMap<Rejection, usize>,
    /// Accepted annotations dropped by schema migration.
    pub dropped_by_migration: usize,
    /// (note id, token, reason) for every rejection.
    pub rejections: BTreeSet<(String, String, Rejection)>,
}

impl ParseReport {
    pub fn accepted_total(&self) -> usize {
        self.accepted.values().sum()
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: &ParseReport) {
        self.notes += other.notes;
        self.sentences += other.sentences;
        self.total_tokens += other.total_tokens;
        for (k, v) in &other.accepted {
            *self.accepted.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &other.rejected {
            *self.rejected.entry(k.clone()).or_insert(0) += v;
        }
        self.dropped_by_migration += other.dropped_by_migration;
        self.rejections.extend(other.rejections.iter().cloned());
    }
}

/// Parses a raw note into annotated sentences in document order.
///
/// Label tokens follow the v1 grammar the notes were generated with; when
/// `schema` is v2 the accepted labels are migrated and `older_age`
/// annotations dropped.
pub fn parse_note(raw: &RawNote, schema: SchemaVersion) -> (Vec<AnnotatedSentence>, ParseReport) {
    let mut report = ParseReport { notes: 1, ..ParseReport::default() };
    let mut sentences = Vec::new();
    for segment in segment_sentences(&raw.text) {
        let ex = extract_annotations(&segment.text);
        for t in &ex.tokens {
            report.total_tokens += 1;
            match &t.result {
                Ok(label) => *report.accepted.entry(*label).or_insert(0) += 1,
                Err(reason) => {
                    *report.rejected.entry(reason.clone()).or_insert(0) += 1;
                    log::debug!("note {}: rejected token {} ({reason})", raw.id, t.token);
                    report.rejections.insert((raw.id.clone(), t.token.clone(), reason.clone()));
                }
            }
        }
        if ex.text.is_empty() {
            continue;
        }
        let mut annotations = Vec::with_capacity(ex.annotations.len());
        for a in ex.annotations {
            match migrate_label(a.label, SchemaVersion::V1, schema) {
                Some(label) => {
                    let migrated = SpanAnnotation { label, ..a };
                    // Merging classes can make a compound bracket list a label twice.
                    if !annotations.contains(&migrated) {
                        annotations.push(migrated);
                    } else {
                        report.dropped_by_migration += 1;
                    }
                }
                None => report.dropped_by_migration += 1,
            }
        }
        let mut sentence = AnnotatedSentence::new(raw.id.clone(), sentences.len(), ex.text);
        sentence.annotations = annotations;
        sentence.section_tag = segment.section;
        sentence.provenance.mark("raw");
        sentences.push(sentence);
    }
    report.sentences = sentences.len();
    if report.rejected_total() > 0 {
        log::info!("note {}: {} label token(s) rejected", raw.id, report.rejected_total());
    }
    (sentences, report)
}

/// Parses many notes, concatenating sentences in input order.
pub fn parse_notes(raws: &[RawNote], schema: SchemaVersion) -> (Vec<AnnotatedSentence>, ParseReport) {
    let mut all = Vec::new();
    let mut report = ParseReport::default();
    for raw in raws {
        let (s, r) = parse_note(raw, schema);
        all.extend(s);
        report.merge(&r);
    }
    (all, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::PromptKind;
    use crate::schema::{Factor, Polarity};

    fn texts(segs: &[Segment]) -> Vec<&str> {
        segs.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn segments_simple_periods() {
        assert_eq!(texts(&segment_sentences("A. B.")), vec!["A.", "B."]);
    }

    #[test]
    fn abbreviation_is_not_a_boundary() {
        let segs = segment_sentences("He is 45 y.o. male. She left.");
        assert_eq!(texts(&segs), vec!["He is 45 y.o. male.", "She left."]);
        let segs = segment_sentences("Seen by Dr. Smith today. Plan agreed.");
        assert_eq!(segs.len(), 2);
    }

    #[test]
    fn never_splits_inside_brackets() {
        let s = "He is well [ILLNESS_FACTOR(POSITIVE):a. B] today. Next one.";
        assert_eq!(segment_sentences(s).len(), 2);
    }

    #[test]
    fn segments_reconstruct_note() {
        let note = "Illness history:\nShe is low. He is 45 y.o. now!  Really?\n\nPlan:\nReview in 2 weeks.";
        let segs = segment_sentences(note);
        let chars: Vec<char> = note.chars().collect();
        for s in &segs {
            let slice: String = chars[s.offset..s.offset + s.text.chars().count()].iter().collect();
            assert_eq!(slice, s.text);
        }
        assert_eq!(segs[0].section.as_deref(), Some("Illness history"));
        assert_eq!(segs.last().unwrap().section.as_deref(), Some("Plan"));
        assert_eq!(texts(&segs), vec!["She is low.", "He is 45 y.o. now!", "Really?", "Review in 2 weeks."]);
    }

    #[test]
    fn prefix_heuristic_two_labels() {
        let ex = extract_annotations(
            "She was never hospitalized [ILLNESS_FACTOR(NEGATIVE):multiple_hospitalizations] and takes her tablets [TREATMENT_FACTOR(NEGATIVE):non_adherence].",
        );
        assert_eq!(ex.text, "She was never hospitalized and takes her tablets.");
        assert_eq!(ex.annotations.len(), 2);
        let spans: Vec<&str> = ex
            .annotations
            .iter()
            .map(|a| crate::text::char_slice(&ex.text, a.start, a.end))
            .collect();
        assert_eq!(spans, vec!["She was never hospitalized", "and takes her tablets"]);
    }

    #[test]
    fn first_sentence_of_fixture_note() {
        let ex = extract_annotations(
            "The patient is a 45-year old female [PATIENT_FACTOR(POSITIVE):older_age] who presents with a history of mental illness in her family, with her sister suffering from bipolar disorder [PATIENT_FACTOR(POSITIVE):family_member_mental_disorder].",
        );
        assert!(ex.text.starts_with("The patient is a 45-year old female who presents"));
        assert_eq!(ex.annotations[0], SpanAnnotation::new(0, 35, Label::new(Factor::OlderAge, Polarity::Positive)));
        assert!(ex.text.ends_with("bipolar disorder."));
    }

    #[test]
    fn no_tokens_no_annotations() {
        let ex = extract_annotations("Speech was normal in rate and volume.");
        assert!(ex.annotations.is_empty());
        assert_eq!(ex.text, "Speech was normal in rate and volume.");
    }

    #[test]
    fn rejected_tokens_are_removed_without_annotation() {
        let ex = extract_annotations("She is lonely [ILLNESS_FACTOR(POSITIVE):loneliness] at home.");
        assert_eq!(ex.text, "She is lonely at home.");
        assert!(ex.annotations.is_empty());
        assert_eq!(ex.tokens[0].result, Err(Rejection::UnknownFactor));
        let ex = extract_annotations("Better [ILLNESS_FACTOR:improvement(NEGATIVE)] now.");
        assert_eq!(ex.tokens[0].result, Err(Rejection::Malformed));
        assert_eq!(ex.text, "Better now.");
    }

    #[test]
    fn compound_bracket_shares_span() {
        let ex = extract_annotations(
            "A severe and chronic illness course [ILLNESS_FACTOR(POSITIVE):severe_illness, ILLNESS_FACTOR(POSITIVE):recurrent_episodes].",
        );
        assert_eq!(ex.annotations.len(), 2);
        assert_eq!(ex.annotations[0].start, ex.annotations[1].start);
        assert_eq!(ex.annotations[0].end, ex.annotations[1].end);
        assert_eq!(ex.annotations[1].label, Label::new(Factor::RecurrentEpisodes, Polarity::Positive));
    }

    #[test]
    fn token_at_sentence_start_is_an_empty_span() {
        let ex = extract_annotations("[ILLNESS_FACTOR(POSITIVE):anhedonia] She enjoys nothing.");
        assert_eq!(ex.text, "She enjoys nothing.");
        assert!(ex.annotations.is_empty());
        assert_eq!(ex.tokens[0].result, Err(Rejection::EmptySpan));
    }

    #[test]
    fn glued_token_keeps_words_apart() {
        let ex = extract_annotations("no pleasure[ILLNESS_FACTOR(POSITIVE):anhedonia]at all");
        assert_eq!(ex.text, "no pleasure at all");
        assert_eq!(ex.annotations[0].end, 11);
    }

    #[test]
    fn stray_brackets_are_removed() {
        let ex = extract_annotations("Low mood] and [unclosed bracket here.");
        assert!(!ex.text.contains(['[', ']']));
        assert_eq!(ex.tokens.len(), 2);
    }

    #[test]
    fn render_then_reparse_is_identity() {
        let ex = extract_annotations(
            "Over the past 27 years [ILLNESS_FACTOR(POSITIVE):long_illness_duration], she has had thoughts of ending her life [ILLNESS_FACTOR(POSITIVE):suicidality, ILLNESS_FACTOR(POSITIVE):severe_illness] daily.",
        );
        let s = AnnotatedSentence::new("n", 0, ex.text.clone()).with_annotations(ex.annotations.clone());
        let again = extract_annotations(&render_inline(&s));
        assert_eq!(again.text, ex.text);
        assert_eq!(again.annotations, ex.annotations);
    }

    #[test]
    fn parse_note_migrates_to_v2() {
        let raw = RawNote::new(
            "n1",
            PromptKind::Standard,
            "The patient is 70 [PATIENT_FACTOR(POSITIVE):older_age] and was beaten as a child [PATIENT_FACTOR(POSITIVE):childhood_abuse].",
        );
        let (s, r) = parse_note(&raw, SchemaVersion::V2);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].annotations.len(), 1);
        assert_eq!(s[0].annotations[0].label, Label::new(Factor::Abuse, Polarity::Positive));
        assert_eq!(r.dropped_by_migration, 1);
        assert_eq!(r.accepted_total() + r.rejected_total(), r.total_tokens);
    }

    #[test]
    fn pure_prose_note_is_unannotated() {
        let raw = RawNote::new("p", PromptKind::Standard, "She came alone. She was calm. Review soon.");
        let (s, r) = parse_note(&raw, SchemaVersion::V1);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.annotations.is_empty()));
        assert_eq!(r.total_tokens, 0);
    }

    #[test]
    fn report_merge_is_commutative() {
        let a = parse_note(&RawNote::new("a", PromptKind::Standard, "Low [ILLNESS_FACTOR(POSITIVE):x]. Fine."), SchemaVersion::V1).1;
        let b = parse_note(
            &RawNote::new("b", PromptKind::Standard, "No joy [ILLNESS_FACTOR(POSITIVE):anhedonia]."),
            SchemaVersion::V1,
        )
        .1;
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
    }
}
