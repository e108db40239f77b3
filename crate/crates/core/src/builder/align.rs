use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::schema::Schema;

/// Tokenizer output with char ranges into the input text. Special tokens
/// have no range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEncoding {
    pub ids: Vec<u32>,
    pub offsets: Vec<Option<(usize, usize)>>,
    /// `false` marks positions other tokens must not attend to.
    #[serde(default)]
    pub attention_mask: Vec<bool>,
    /// Set when the text was cut to fit the maximum length.
    #[serde(default)]
    pub truncated: bool,
}

impl TokenEncoding {
    /// Encoding with every position attendable.
    pub fn new(ids: Vec<u32>, offsets: Vec<Option<(usize, usize)>>, truncated: bool) -> TokenEncoding {
        assert_eq!(ids.len(), offsets.len(), "one offset per token");
        let attention_mask = vec![true; ids.len()];
        TokenEncoding { ids, offsets, attention_mask, truncated }
    }

    pub fn attends(&self, i: usize) -> bool {
        self.attention_mask.get(i).copied().unwrap_or(true)
    }

    /// Indices of tokens that carry a char range.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.offsets[i].is_some()).collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub trait Tokenizer {
    fn encode(&self, text: &str) -> TokenEncoding;
}

/// One token per whitespace-separated word, ids are word positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> TokenEncoding {
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        let mut start = None;
        let mut n = 0;
        for (i, c) in text.chars().enumerate() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    ids.push(ids.len() as u32);
                    offsets.push(Some((s, i)));
                }
            } else if start.is_none() {
                start = Some(i);
            }
            n = i + 1;
        }
        if let Some(s) = start {
            ids.push(ids.len() as u32);
            offsets.push(Some((s, n)));
        }
        TokenEncoding::new(ids, offsets, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSpan {
    /// First token, inclusive.
    pub start: usize,
    /// One past the last token.
    pub end: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedExample {
    pub encoding: TokenEncoding,
    /// Token covering each char, `None` for chars between tokens.
    pub char_to_token: Vec<Option<usize>>,
    pub spans: Vec<AlignedSpan>,
    /// 1.0 for each distinct annotation label (sentinel if unannotated).
    pub multilabel: Vec<f64>,
    /// Per-token label index; `None` for special tokens.
    pub token_labels: Vec<Option<usize>>,
    /// Number of distinct span extents; compound labels on one extent count once.
    pub span_count: usize,
    /// Annotations with no token left (e.g. cut by truncation).
    pub unaligned: usize,
}

impl AlignedExample {
    /// Spans with distinct token extents, in order of first appearance.
    pub fn distinct_extents(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for s in &self.spans {
            if !out.contains(&(s.start, s.end)) {
                out.push((s.start, s.end));
            }
        }
        out
    }
}

/// Maps char-level annotations onto token indices.
///
/// A span covers every token whose char range intersects it; its start is the
/// first such token and its end one past the last. Each token's label is the
/// label of the first annotation covering it, or the sentinel.
pub fn align(sentence: &AnnotatedSentence, tokenizer: &dyn Tokenizer, schema: &Schema) -> AlignedExample {
    let encoding = tokenizer.encode(&sentence.text);
    let n_chars = sentence.char_len();
    let mut char_to_token = vec![None; n_chars];
    for (t, off) in encoding.offsets.iter().enumerate() {
        if let Some((s, e)) = *off {
            for slot in char_to_token.iter_mut().take(e.min(n_chars)).skip(s) {
                slot.get_or_insert(t);
            }
        }
    }
    let sentinel = schema.index_of(crate::schema::Label::NoAnnotation).expect("sentinel in label space");
    let mut token_labels: Vec<Option<usize>> =
        encoding.offsets.iter().map(|o| o.map(|_| sentinel)).collect();
    let mut covered = vec![false; encoding.len()];
    let mut multilabel = vec![0.0; schema.len()];
    let mut spans = Vec::with_capacity(sentence.annotations.len());
    let mut unaligned = 0;
    for a in &sentence.annotations {
        let Some(label) = schema.index_of(a.label) else {
            unaligned += 1;
            continue;
        };
        multilabel[label] = 1.0;
        let hits: Vec<usize> = encoding
            .offsets
            .iter()
            .enumerate()
            .filter_map(|(t, o)| o.filter(|(s, e)| *s < a.end && a.start < *e).map(|_| t))
            .collect();
        let (Some(&first), Some(&last)) = (hits.first(), hits.last()) else {
            unaligned += 1;
            continue;
        };
        for &t in &hits {
            if !covered[t] {
                covered[t] = true;
                token_labels[t] = Some(label);
            }
        }
        spans.push(AlignedSpan { start: first, end: last + 1, label });
    }
    if sentence.annotations.is_empty() {
        multilabel[sentinel] = 1.0;
    }
    let mut ex = AlignedExample { encoding, char_to_token, spans, multilabel, token_labels, span_count: 0, unaligned };
    ex.span_count = ex.distinct_extents().len();
    ex
}

/// Char range covered by tokens `start..end`, skipping special tokens.
pub fn decode_span_chars(encoding: &TokenEncoding, start: usize, end: usize) -> Option<(usize, usize)> {
    let ranges: Vec<(usize, usize)> = encoding.offsets.get(start..end.min(encoding.len()))?.iter().flatten().copied().collect();
    Some((ranges.first()?.0, ranges.last()?.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpanAnnotation;
    use crate::schema::{Factor, Label, Polarity, SchemaVersion};

    #[test]
    fn whitespace_alignment_example() {
        let schema = Schema::new(SchemaVersion::V2);
        let l = Label::new(Factor::Anhedonia, Polarity::Positive);
        let s = AnnotatedSentence::new("n", 0, "aa bb cc").with_annotations(vec![SpanAnnotation::new(3, 8, l)]);
        let ex = align(&s, &WhitespaceTokenizer, &schema);
        assert_eq!(ex.spans, vec![AlignedSpan { start: 1, end: 3, label: schema.index_of(l).unwrap() }]);
        assert_eq!(ex.span_count, 1);
        assert_eq!(ex.token_labels[0], Some(0));
        assert_eq!(ex.token_labels[2], schema.index_of(l));
        assert_eq!(decode_span_chars(&ex.encoding, 1, 3), Some((3, 8)));
        assert_eq!(ex.char_to_token[2], None);
    }

    #[test]
    fn unannotated_sentence() {
        let schema = Schema::new(SchemaVersion::V2);
        let ex = align(&AnnotatedSentence::new("n", 0, "all good"), &WhitespaceTokenizer, &schema);
        assert_eq!(ex.span_count, 0);
        assert_eq!(ex.multilabel.iter().sum::<f64>(), 1.0);
        assert_eq!(ex.multilabel[0], 1.0);
    }

    #[test]
    fn span_inside_one_token_maps_to_it() {
        let schema = Schema::new(SchemaVersion::V2);
        let l = Label::new(Factor::Anhedonia, Polarity::Positive);
        let s = AnnotatedSentence::new("n", 0, "xx abcdef").with_annotations(vec![
            SpanAnnotation::new(4, 6, l),
            SpanAnnotation::new(0, 2, Label::new(Factor::Abuse, Polarity::Negative)),
        ]);
        let ex = align(&s, &WhitespaceTokenizer, &schema);
        assert_eq!((ex.spans[0].start, ex.spans[0].end), (1, 2));
        assert_eq!(ex.span_count, 2);
    }

    #[test]
    fn compound_labels_share_one_extent() {
        let schema = Schema::new(SchemaVersion::V2);
        let a = Label::new(Factor::Anhedonia, Polarity::Positive);
        let b = Label::new(Factor::Abuse, Polarity::Positive);
        let s = AnnotatedSentence::new("n", 0, "aa bb")
            .with_annotations(vec![SpanAnnotation::new(0, 5, a), SpanAnnotation::new(0, 5, b)]);
        let ex = align(&s, &WhitespaceTokenizer, &schema);
        assert_eq!(ex.spans.len(), 2);
        assert_eq!(ex.span_count, 1);
        assert_eq!(ex.multilabel.iter().sum::<f64>(), 2.0);
    }
}
