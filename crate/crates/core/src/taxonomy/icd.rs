use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TaxonomyError;

/// An ICD-10-CM code in normalized form (dot stripped, uppercase).
///
/// Equality, ordering and hashing use the normalized form only.
#[derive(Debug, Clone)]
pub struct IcdCode {
    raw: String,
    normalized: String,
}

impl PartialEq for IcdCode {
    fn eq(&self, other: &Self) -> bool {
        self.normalized == other.normalized
    }
}

impl Eq for IcdCode {}

impl std::hash::Hash for IcdCode {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.normalized.hash(state);
    }
}

impl PartialOrd for IcdCode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IcdCode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.normalized.cmp(&other.normalized)
    }
}

/// Hierarchy depth used by code-only matching.
///
/// Each level is a fixed-length prefix of the normalized code; `Exact`
/// keeps the whole code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeLevel {
    Category,
    Subcategory,
    FineGrained,
    Exact,
}

impl CodeLevel {
    pub const ALL: [CodeLevel; 4] = [
        CodeLevel::Category,
        CodeLevel::Subcategory,
        CodeLevel::FineGrained,
        CodeLevel::Exact,
    ];

    pub fn from_index(level: u8) -> Option<Self> {
        Self::ALL.get(level as usize).copied()
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Prefix length in significant characters, `None` for the full code.
    pub fn prefix_len(self) -> Option<usize> {
        match self {
            CodeLevel::Category => Some(3),
            CodeLevel::Subcategory => Some(4),
            CodeLevel::FineGrained => Some(5),
            CodeLevel::Exact => None,
        }
    }
}

pub fn parse_icd(text: &str) -> Result<IcdCode, TaxonomyError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(malformed(text, 0, "empty code"));
    }

    let mut normalized = String::with_capacity(7);
    let mut seen_dot = false;
    for (pos, ch) in trimmed.chars().enumerate() {
        if ch == '.' {
            if seen_dot || normalized.len() != 3 {
                return Err(malformed(
                    text,
                    pos,
                    "dot is only allowed after the third character",
                ));
            }
            seen_dot = true;
            continue;
        }
        let sig = normalized.len();
        let ok = match sig {
            0 => ch.is_ascii_alphabetic(),
            1 => ch.is_ascii_digit(),
            2..=6 => ch.is_ascii_alphanumeric(),
            _ => return Err(malformed(text, pos, "more than 7 significant characters")),
        };
        if !ok {
            let reason = match sig {
                0 => "must start with a letter",
                1 => "second character must be a digit",
                _ => "expected an alphanumeric character",
            };
            return Err(malformed(text, pos, reason));
        }
        normalized.push(ch.to_ascii_uppercase());
    }

    if normalized.len() < 3 {
        return Err(malformed(
            text,
            trimmed.chars().count(),
            "fewer than 3 significant characters",
        ));
    }
    if seen_dot && normalized.len() == 3 {
        return Err(malformed(text, trimmed.len() - 1, "trailing dot"));
    }

    Ok(IcdCode {
        raw: trimmed.to_string(),
        normalized,
    })
}

fn malformed(input: &str, position: usize, reason: &str) -> TaxonomyError {
    TaxonomyError::MalformedCode {
        input: input.to_string(),
        position,
        reason: reason.to_string(),
    }
}

impl IcdCode {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    pub fn category(&self) -> &str {
        &self.normalized[..3]
    }

    /// Canonical dotted form, e.g. `S72.001A`.
    pub fn render(&self) -> String {
        if self.normalized.len() > 3 {
            format!("{}.{}", &self.normalized[..3], &self.normalized[3..])
        } else {
            self.normalized.clone()
        }
    }

    pub fn truncate_to(&self, level: CodeLevel) -> &str {
        match level.prefix_len() {
            Some(n) if n < self.normalized.len() => &self.normalized[..n],
            _ => &self.normalized,
        }
    }
}

/// Level 0..=3 truncation; `None` when `level` is out of range.
pub fn truncate_to_level(code: &IcdCode, level: u8) -> Option<&str> {
    CodeLevel::from_index(level).map(|l| code.truncate_to(l))
}

impl fmt::Display for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for IcdCode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_icd(s)
    }
}

impl Serialize for IcdCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for IcdCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_icd(&s).map_err(serde::de::Error::custom)
    }
}
