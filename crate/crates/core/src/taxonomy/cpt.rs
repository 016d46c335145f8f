use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TaxonomyError;

/// A five-character CPT code: five digits, or four digits and an uppercase letter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CptCode(String);

pub fn parse_cpt(text: &str) -> Result<CptCode, TaxonomyError> {
    let t = text.trim();
    let chars: Vec<char> = t.chars().collect();
    if chars.len() != 5 {
        return Err(TaxonomyError::MalformedCode {
            input: text.to_string(),
            position: chars.len().min(5),
            reason: format!("CPT codes have exactly 5 characters, got {}", chars.len()),
        });
    }
    for (pos, ch) in chars.iter().enumerate() {
        let ok = if pos < 4 {
            ch.is_ascii_digit()
        } else {
            ch.is_ascii_digit() || ch.is_ascii_uppercase()
        };
        if !ok {
            return Err(TaxonomyError::MalformedCode {
                input: text.to_string(),
                position: pos,
                reason: "expected four digits followed by a digit or uppercase letter".into(),
            });
        }
    }
    Ok(CptCode(t.to_string()))
}

impl CptCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CptCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for CptCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CptCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_cpt(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_numeric_and_lettered_codes() {
        assert_eq!(parse_cpt("99213").unwrap().as_str(), "99213");
        assert_eq!(parse_cpt("0001F").unwrap().as_str(), "0001F");
    }

    #[test]
    fn rejects_wrong_length_and_shape() {
        assert!(parse_cpt("2740").is_err());
        assert!(parse_cpt("274470").is_err());
        assert!(parse_cpt("A9921").is_err());
        assert!(parse_cpt("0001f").is_err());
    }
}
