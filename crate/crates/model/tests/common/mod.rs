#![allow(dead_code)]

use factorspan_core::corpus::{AnnotatedSentence, SpanAnnotation};
use factorspan_core::schema::{Factor, Label, Polarity, Schema, SchemaVersion};
use factorspan_model::encoder::EncoderConfig;
use factorspan_model::heads::{HeadConfig, ModelKind};
use factorspan_model::tokenizer::{WordPiece, WordPieceConfig};
use factorspan_model::trainer::{init_checkpoint, Dataset};
use factorspan_model::Checkpoint;

fn ann(text: &str, part: &str, label: Label) -> SpanAnnotation {
    let start = text.find(part).expect("part in text");
    let start = text[..start].chars().count();
    SpanAnnotation::new(start, start + part.chars().count(), label)
}

pub fn sentences() -> Vec<AnnotatedSentence> {
    let sui_n = Label::new(Factor::Suicidality, Polarity::Negative);
    let sui_p = Label::new(Factor::Suicidality, Polarity::Positive);
    let abuse = Label::new(Factor::Abuse, Polarity::Positive);
    let anh = Label::new(Factor::Anhedonia, Polarity::Positive);
    let rows: Vec<(&str, Vec<(&str, Label)>)> = vec![
        ("He denies intent to end his own life.", vec![("He denies intent to end his own life", sui_n)]),
        ("She reports thoughts of ending her life and no longer enjoys music.", vec![
            ("She reports thoughts of ending her life", sui_p),
            ("and no longer enjoys music", anh),
        ]),
        ("Mood is stable today.", vec![]),
        ("History of abuse by her father.", vec![("History of abuse by her father", abuse)]),
        ("Patient was abused as a child and has lost interest in hobbies.", vec![
            ("Patient was abused as a child", abuse),
            ("and has lost interest in hobbies", anh),
        ]),
        ("No thoughts of self harm.", vec![("No thoughts of self harm", sui_n)]),
        ("He attends the clinic weekly.", vec![]),
        ("Finds no pleasure in activities.", vec![("Finds no pleasure in activities", anh)]),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(i, (text, anns))| {
            let a = anns.into_iter().map(|(p, l)| ann(text, p, l)).collect();
            AnnotatedSentence::new(format!("note{}", i / 2), i, text).with_annotations(a)
        })
        .collect()
}

pub fn tokenizer(sentences: &[AnnotatedSentence], max_len: usize) -> WordPiece {
    WordPiece::train(
        sentences.iter().map(|s| s.text.as_str()),
        &WordPieceConfig { vocab_size: 400, max_len, ..Default::default() },
    )
}

pub fn small_encoder(vocab: usize, hidden: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig { hidden, heads: 4, intermediate: hidden * 4, max_len, ..EncoderConfig::desk(vocab) }
}

pub fn setup(kind: ModelKind, hidden: usize, seed: u64) -> (Checkpoint, Dataset) {
    let s = sentences();
    let tok = tokenizer(&s, 48);
    let enc = small_encoder(tok.vocab_size(), hidden, 48);
    let schema = Schema::new(SchemaVersion::V2);
    let data = Dataset::new(s, &tok, &schema);
    let ck = init_checkpoint(kind, &enc, &HeadConfig::default(), SchemaVersion::V2, tok, seed).unwrap();
    (ck, data)
}
