//! Character-index helpers and seeded stream derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Slice by character indices (end-exclusive). Out-of-range indices clamp.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let b_start = indices.by_ref().nth(start).unwrap_or(s.len());
    let b_end = if end <= start {
        b_start
    } else {
        indices.nth(end - start - 1).unwrap_or(s.len())
    };
    &s[b_start..b_end]
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset to char offset.
pub fn byte_to_char(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed for an independent stream keyed by `parts`.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = splitmix64(master);
    for p in parts {
        h = splitmix64(h ^ fnv1a(p.as_bytes()));
    }
    h
}

pub fn derive_rng(master: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Lowercased words with punctuation stripped, split on whitespace.
pub fn stat_words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}
