//! Word-piece tokenizer with char offsets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use factorspan_core::builder::{TokenEncoding, Tokenizer};
use serde::{Deserialize, Serialize};

use crate::ModelError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

const CONTINUATION: &str = "##";
/// Longer words become a single unknown token.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WordPieceConfig {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub lowercase: bool,
    /// Maximum encoding length including the two boundary tokens.
    pub max_len: usize,
}

impl Default for WordPieceConfig {
    fn default() -> Self {
        WordPieceConfig { vocab_size: 5000, min_frequency: 2, lowercase: false, max_len: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WordPieceFile {
    tokens: Vec<String>,
    lowercase: bool,
    max_len: usize,
}

#[derive(Debug, Clone)]
pub struct WordPiece {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
    max_len: usize,
    unk: u32,
    cls: u32,
    sep: u32,
    pad: u32,
}

/// A pre-token: its first char index and its chars.
struct Word {
    start: usize,
    chars: Vec<char>,
}

/// Splits on whitespace into alphanumeric runs and single other chars.
fn pre_tokenize(text: &str, lowercase: bool) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<Word> = None;
    for (i, c) in text.chars().enumerate() {
        let c = if lowercase { c.to_lowercase().next().unwrap_or(c) } else { c };
        if c.is_alphanumeric() {
            current.get_or_insert_with(|| Word { start: i, chars: Vec::new() }).chars.push(c);
            continue;
        }
        if let Some(w) = current.take() {
            words.push(w);
        }
        if !c.is_whitespace() {
            words.push(Word { start: i, chars: vec![c] });
        }
    }
    if let Some(w) = current {
        words.push(w);
    }
    words
}

impl WordPiece {
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool, max_len: usize) -> Result<WordPiece, ModelError> {
        if max_len < 2 {
            return Err(ModelError::InvalidInput(format!("max_len {max_len} leaves no room for boundary tokens")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(ModelError::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let id = |name: &str| {
            index.get(name).copied().ok_or_else(|| ModelError::Format(format!("vocabulary lacks {name}")))
        };
        let (unk, cls, sep, pad) = (id(UNK)?, id(CLS)?, id(SEP)?, id(PAD)?);
        Ok(WordPiece { tokens, index, lowercase, max_len, unk, cls, sep, pad })
    }

    /// Reads a one-token-per-line vocabulary file.
    pub fn from_vocab_txt(path: &Path, lowercase: bool, max_len: usize) -> Result<WordPiece, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::io_at(path, e))?;
        WordPiece::from_tokens(text.lines().map(str::to_string).collect(), lowercase, max_len)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&WordPieceFile {
            tokens: self.tokens.clone(),
            lowercase: self.lowercase,
            max_len: self.max_len,
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<WordPiece, ModelError> {
        let f: WordPieceFile = serde_json::from_str(json)?;
        WordPiece::from_tokens(f.tokens, f.lowercase, f.max_len)
    }

    /// Learns a vocabulary from `texts`.
    ///
    /// Starts from every observed char (plain and as a continuation) and
    /// repeatedly merges the adjacent pair with the highest
    /// freq(ab) / (freq(a)·freq(b)) until the vocabulary reaches the target
    /// size or no pair occurs `min_frequency` times. Ties go to the more
    /// frequent pair, then to the lexicographically smaller merge.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, cfg: &WordPieceConfig) -> WordPiece {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for t in texts {
            for w in pre_tokenize(t, cfg.lowercase) {
                if w.chars.len() <= MAX_WORD_CHARS {
                    *counts.entry(w.chars.into_iter().collect()).or_insert(0) += 1;
                }
            }
        }
        let mut symbols: Vec<String> = Vec::new();
        let mut symbol_ids: HashMap<String, u32> = HashMap::new();
        let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
            *symbol_ids.entry(s.clone()).or_insert_with(|| {
                symbols.push(s);
                (symbols.len() - 1) as u32
            })
        };
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut alphabet: Vec<char> = counts.keys().flat_map(|w| w.chars()).collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        for c in &alphabet {
            vocab.push(c.to_string());
        }
        for c in &alphabet {
            vocab.push(format!("{CONTINUATION}{c}"));
        }
        let mut words: Vec<(Vec<u32>, u64)> = counts
            .iter()
            .map(|(w, &n)| {
                let pieces = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| {
                        let s = if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") };
                        intern(s, &mut symbols)
                    })
                    .collect();
                (pieces, n)
            })
            .collect();
        let mut in_vocab: std::collections::HashSet<String> = vocab.iter().cloned().collect();

        while vocab.len() < cfg.vocab_size {
            let mut pair_freq: HashMap<(u32, u32), u64> = HashMap::new();
            let mut sym_freq: HashMap<u32, u64> = HashMap::new();
            for (w, n) in &words {
                for &s in w {
                    *sym_freq.entry(s).or_insert(0) += n;
                }
                for p in w.windows(2) {
                    *pair_freq.entry((p[0], p[1])).or_insert(0) += n;
                }
            }
            let merged_name = |a: u32, b: u32| {
                let right = &symbols[b as usize];
                format!("{}{}", symbols[a as usize], right.strip_prefix(CONTINUATION).unwrap_or(right))
            };
            let mut best: Option<((u32, u32), f64, u64, String)> = None;
            for (&(a, b), &f) in &pair_freq {
                if f < cfg.min_frequency {
                    continue;
                }
                let score = f as f64 / (sym_freq[&a] as f64 * sym_freq[&b] as f64);
                let better = match &best {
                    None => true,
                    Some((_, bs, bf, bn)) => {
                        score > *bs || (score == *bs && (f > *bf || (f == *bf && merged_name(a, b) < *bn)))
                    }
                };
                if better {
                    best = Some(((a, b), score, f, merged_name(a, b)));
                }
            }
            let Some(((a, b), _, _, name)) = best else { break };
            let m = intern(name.clone(), &mut symbols);
            if in_vocab.insert(name.clone()) {
                vocab.push(name);
            }
            for (w, _) in &mut words {
                let mut i = 0;
                while i + 1 < w.len() {
                    if w[i] == a && w[i + 1] == b {
                        w[i] = m;
                        w.remove(i + 1);
                    }
                    i += 1;
                }
            }
        }
        WordPiece::from_tokens(vocab, cfg.lowercase, cfg.max_len).expect("trained vocabulary is well formed")
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    fn word_pieces(&self, word: &Word, out: &mut Vec<(u32, usize, usize)>) {
        let n = word.chars.len();
        let whole = (self.unk, word.start, word.start + n);
        if n > MAX_WORD_CHARS {
            out.push(whole);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut candidate = String::new();
        while start < n {
            let mut end = n;
            let mut found = None;
            while start < end {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&word.chars[start..end]);
                if let Some(&id) = self.index.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            let Some(id) = found else {
                out.truncate(mark);
                out.push(whole);
                return;
            };
            out.push((id, word.start + start, word.start + end));
            start = end;
        }
    }
}

impl Tokenizer for WordPiece {
    /// `[CLS] pieces… [SEP]`; boundary tokens carry no char range. Content
    /// beyond `max_len − 2` pieces is dropped and the encoding flagged.
    fn encode(&self, text: &str) -> TokenEncoding {
        let mut pieces = Vec::new();
        for w in pre_tokenize(text, self.lowercase) {
            self.word_pieces(&w, &mut pieces);
        }
        let room = self.max_len - 2;
        let truncated = pieces.len() > room;
        if truncated {
            log::warn!("text of {} pieces truncated to {room}", pieces.len());
            pieces.truncate(room);
        }
        let mut ids = Vec::with_capacity(pieces.len() + 2);
        let mut offsets = Vec::with_capacity(pieces.len() + 2);
        ids.push(self.cls);
        offsets.push(None);
        for (id, s, e) in pieces {
            ids.push(id);
            offsets.push(Some((s, e)));
        }
        ids.push(self.sep);
        offsets.push(None);
        TokenEncoding::new(ids, offsets, truncated)
    }
}
