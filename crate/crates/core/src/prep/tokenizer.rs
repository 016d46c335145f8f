//! Tokenizer interface plus two offline implementations.

use crate::text::fnv1a64;

pub const PAD_ID: u32 = 0;
pub const DEFAULT_DELIMITER_ID: u32 = 1;
/// Ids below this are reserved for special tokens.
pub const FIRST_REGULAR_ID: u32 = 2;

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn encode(&self, text: &str) -> Vec<u32>;

    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

/// Whitespace split with every punctuation character as its own token.
/// Token ids are hashed into a fixed vocabulary above the reserved ids.
#[derive(Debug, Clone, Copy)]
pub struct WhitespaceTokenizer {
    pub vocab_size: u32,
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        Self {
            vocab_size: 1 << 20,
        }
    }
}

impl WhitespaceTokenizer {
    pub fn pieces(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut start = 0;
            for (i, c) in word.char_indices() {
                if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                    if start < i {
                        out.push(&word[start..i]);
                    }
                    out.push(&word[i..i + c.len_utf8()]);
                    start = i + c.len_utf8();
                }
            }
            if start < word.len() {
                out.push(&word[start..]);
            }
        }
        out
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace-punct-v1"
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let span = u64::from(self.vocab_size - FIRST_REGULAR_ID);
        Self::pieces(text)
            .into_iter()
            .map(|p| FIRST_REGULAR_ID + (fnv1a64(p.as_bytes()) % span) as u32)
            .collect()
    }
}

/// One token per UTF-8 byte; a stand-in for subword tokenizers in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn name(&self) -> &str {
        "byte-v1"
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes()
            .map(|b| FIRST_REGULAR_ID + u32::from(b))
            .collect()
    }
}
