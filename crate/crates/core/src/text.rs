//! Small text utilities shared across modules.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "and",
    "the",
    "with",
    "without",
    "for",
    "from",
    "not",
    "other",
    "unspecified",
    "due",
    "has",
    "had",
    "was",
    "are",
    "his",
    "her",
    "this",
    "that",
    "patient",
    "of",
    "in",
    "on",
    "to",
    "or",
    "by",
    "at",
    "is",
    "as",
    "an",
    "a",
    "be",
    "no",
    "per",
    "pt",
    "noted",
    "history",
];

/// FNV-1a, 64-bit. Stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Whitespace tokens, lowercased, with leading/trailing punctuation removed.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

/// Distinct informative words (length ≥ 3, not a stopword).
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|t| t.len() >= 3 && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Fraction of `reference`'s content words that also occur in `text`.
pub fn coverage(reference: &str, text: &str) -> f64 {
    let want = content_words(reference);
    if want.is_empty() {
        return 0.0;
    }
    let have = content_words(text);
    want.intersection(&have).count() as f64 / want.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn tokens_strip_punctuation() {
        let t: Vec<_> = word_tokens("Type 2 diabetes, (controlled).").collect();
        assert_eq!(t, vec!["type", "2", "diabetes", "controlled"]);
    }

    #[test]
    fn coverage_counts_content_words() {
        assert_eq!(
            coverage(
                "Essential (primary) hypertension",
                "history of essential hypertension"
            ),
            2.0 / 3.0
        );
        assert_eq!(coverage("", "anything"), 0.0);
    }
}
