use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, SpanAnnotation};
use crate::text;

const POSSESSIVES: &[&str] = &["my", "your", "his", "her", "its", "our", "their"];
const ARTICLES: &[&str] = &["a", "an", "the"];
const PRONOUNS: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them", "myself", "yourself", "himself",
    "herself", "itself", "ourselves", "themselves",
];
const AUXILIARIES: &[&str] = &[
    "am", "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did", "will",
    "would", "shall", "should", "can", "could", "may", "might", "must",
];
/// Personal pronouns that a de-identified note would show as a placeholder.
const REPLACEABLE: &[&str] = &["he", "she", "him", "they", "them"];
const FEMALE: &[&str] = &["she"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub possessives: f64,
    pub articles: f64,
    pub pronouns: f64,
    pub auxiliaries: f64,
    pub punctuation: f64,
    /// Probability that a replaceable pronoun becomes a placeholder.
    pub placeholder: f64,
    /// Female-pronoun placeholder first, then the generic one.
    pub placeholders: [String; 2],
    pub lowercase: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            possessives: 0.3,
            articles: 0.3,
            pronouns: 0.3,
            auxiliaries: 0.3,
            punctuation: 0.3,
            placeholder: 0.15,
            placeholders: ["FFFFF".to_string(), "XXXXX".to_string()],
            lowercase: false,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> NoiseConfig {
        NoiseConfig {
            possessives: 0.0,
            articles: 0.0,
            pronouns: 0.0,
            auxiliaries: 0.0,
            punctuation: 0.0,
            placeholder: 0.0,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("possessives", self.possessives),
            ("articles", self.articles),
            ("pronouns", self.pronouns),
            ("auxiliaries", self.auxiliaries),
            ("punctuation", self.punctuation),
            ("placeholder", self.placeholder),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("noise probability `{name}` must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutcome {
    pub sentence: AnnotatedSentence,
    /// Annotations whose text was deleted entirely.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Word,
    Punct,
    Space,
}

struct Piece {
    kind: Kind,
    /// Char range in the input.
    start: usize,
    end: usize,
}

fn pieces(chars: &[char]) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let kind = if c.is_whitespace() {
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            Kind::Space
        } else if c.is_alphanumeric() {
            // Apostrophes and hyphens inside a word stay with it.
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || (matches!(chars[i], '\'' | '’' | '-')
                        && i + 1 < chars.len()
                        && chars[i + 1].is_alphanumeric()))
            {
                i += 1;
            }
            Kind::Word
        } else {
            i += 1;
            Kind::Punct
        };
        out.push(Piece { kind, start, end: i });
    }
    out
}

/// What happens to one piece of the input.
enum Fate {
    Keep,
    /// Keep the first `n` chars (possessive clitic stripped).
    Prefix(usize),
    Replace(String),
    Drop,
}

fn word_fate(word: &str, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> Fate {
    let lower = word.to_lowercase();
    let w = lower.as_str();
    if REPLACEABLE.contains(&w) && rng.random::<f64>() < cfg.placeholder {
        let p = if FEMALE.contains(&w) { &cfg.placeholders[0] } else { &cfg.placeholders[1] };
        return Fate::Replace(p.clone());
    }
    let mut drop = false;
    for (list, p) in [
        (POSSESSIVES, cfg.possessives),
        (ARTICLES, cfg.articles),
        (PRONOUNS, cfg.pronouns),
        (AUXILIARIES, cfg.auxiliaries),
    ] {
        if list.contains(&w) && rng.random::<f64>() < p {
            drop = true;
        }
    }
    if drop {
        return Fate::Drop;
    }
    for clitic in ["'s", "’s"] {
        if w.len() > clitic.len() + 1 && w.ends_with(clitic) {
            if rng.random::<f64>() < cfg.possessives {
                return Fate::Prefix(word.chars().count() - 2);
            }
            break;
        }
    }
    Fate::Keep
}

/// Telegraphic rewrite of one sentence.
///
/// Words on the closed possessive/article/pronoun/auxiliary lists and
/// punctuation characters are deleted independently with their category's
/// probability; a possessive "'s" is stripped with the possessive rate; some
/// personal pronouns become placeholders. Whitespace is rebuilt so that
/// surviving words are separated by a single space. Each annotation is
/// remapped to the surviving part of its original extent and dropped if
/// nothing survives. If nothing at all survives, the sentence is returned
/// unchanged.
pub fn inject_noise(sentence: &AnnotatedSentence, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> NoiseOutcome {
    let chars: Vec<char> = sentence.text.chars().collect();
    let ps = pieces(&chars);
    let mut out = String::new();
    let mut out_len = 0usize;
    // For each input char, its output position if it survives verbatim.
    let mut map: Vec<Option<usize>> = vec![None; chars.len()];
    // Input range -> output range for replaced words.
    let mut replaced: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut pending_space = false;
    for p in &ps {
        let fate = match p.kind {
            Kind::Space => {
                if out_len > 0 {
                    pending_space = true;
                }
                continue;
            }
            Kind::Punct => {
                if rng.random::<f64>() < cfg.punctuation {
                    Fate::Drop
                } else {
                    Fate::Keep
                }
            }
            Kind::Word => {
                let word: String = chars[p.start..p.end].iter().collect();
                word_fate(&word, cfg, rng)
            }
        };
        let keep_n = match &fate {
            Fate::Drop => continue,
            Fate::Keep => p.end - p.start,
            Fate::Prefix(n) => *n,
            Fate::Replace(_) => 0,
        };
        if pending_space {
            out.push(' ');
            out_len += 1;
            pending_space = false;
        }
        if let Fate::Replace(r) = &fate {
            let n = r.chars().count();
            replaced.push((p.start, p.end, out_len, out_len + n));
            out.push_str(r);
            out_len += n;
        } else {
            for (k, &c) in chars[p.start..p.start + keep_n].iter().enumerate() {
                map[p.start + k] = Some(out_len);
                out.push(c);
                out_len += 1;
            }
        }
    }

    if out.is_empty() {
        return NoiseOutcome { sentence: sentence.clone(), dropped: 0 };
    }

    let mut annotations: Vec<SpanAnnotation> = Vec::with_capacity(sentence.annotations.len());
    let mut dropped = 0usize;
    // (original extent, remapped extent) of the previous annotation.
    let mut prev: Option<((usize, usize), (usize, usize))> = None;
    for a in &sentence.annotations {
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for pos in map[a.start..a.end].iter().flatten() {
            lo = lo.min(*pos);
            hi = hi.max(pos + 1);
        }
        for &(s, e, os, oe) in &replaced {
            if s < a.end && a.start < e {
                lo = lo.min(os);
                hi = hi.max(oe);
            }
        }
        if let Some((orig, mapped)) = prev {
            if orig == (a.start, a.end) {
                // Compound label on the same extent keeps the same extent.
                if mapped.0 < mapped.1 {
                    annotations.push(SpanAnnotation::new(mapped.0, mapped.1, a.label));
                } else {
                    dropped += 1;
                }
                continue;
            }
            // A replaced word straddling two spans must not make them overlap.
            lo = lo.max(mapped.1);
        }
        if lo < hi {
            annotations.push(SpanAnnotation::new(lo, hi, a.label));
            prev = Some(((a.start, a.end), (lo, hi)));
        } else {
            log::debug!("{}: annotation {}..{} deleted by noise", sentence.key(), a.start, a.end);
            dropped += 1;
            prev = Some(((a.start, a.end), (lo.min(hi), lo.min(hi))));
        }
    }

    let mut s = sentence.clone();
    s.text = out;
    s.annotations = annotations;
    s.provenance.mark("noised");
    NoiseOutcome { sentence: s, dropped }
}

/// Noise with the sentence's own stream derived from (seed, note id,
/// sentence index, copy number); records the stream seed in provenance.
pub(crate) fn noise_in_stream(s: &AnnotatedSentence, cfg: &NoiseConfig, seed: u64) -> NoiseOutcome {
    let idx = s.sentence_index.to_string();
    let copy = s.provenance.copy.to_string();
    let stream = text::derive_seed(seed, &[&s.note_id, &idx, &copy]);
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(stream);
    let mut out = inject_noise(s, cfg, &mut rng);
    out.sentence.provenance.noise_seed = Some(stream);
    out
}

/// Lowercases the text char by char. Characters whose lowercase form is more
/// than one char are left as they are so offsets stay valid.
pub fn lowercase_sentence(s: &AnnotatedSentence) -> AnnotatedSentence {
    let mut out = s.clone();
    out.text = s
        .text
        .chars()
        .map(|c| {
            let mut l = c.to_lowercase();
            match (l.next(), l.next()) {
                (Some(x), None) => x,
                _ => c,
            }
        })
        .collect();
    out.provenance.mark("lowercased");
    out
}
