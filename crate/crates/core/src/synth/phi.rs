//! Rule-based screen for patient-identifying tokens.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::taxonomy::bundled::SURNAMES_TXT;

/// Rule that fired. The matched text itself is never reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiRule {
    LongNumber,
    DateOfBirth,
    NamedPerson,
    NameLabel,
}

impl PhiRule {
    pub fn as_str(self) -> &'static str {
        match self {
            PhiRule::LongNumber => "number sequence of 7+ digits",
            PhiRule::DateOfBirth => "date-of-birth pattern",
            PhiRule::NamedPerson => "honorific followed by listed surname",
            PhiRule::NameLabel => "name label",
        }
    }
}

struct Patterns {
    long_number: Regex,
    dob: Regex,
    honorific: Regex,
    name_label: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        long_number: Regex::new(r"\d(?:[ \-.()/]*\d){6,}").unwrap(),
        dob: Regex::new(
            r"(?i)\b(?:dob|d\.o\.b\.?|date of birth|born(?: on)?)\s*[:\-]?\s*(?:\d{1,4}[/\-.]\d{1,2}[/\-.]\d{1,4}|(?:jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*\.? \d{1,2},? \d{2,4})",
        )
        .unwrap(),
        honorific: Regex::new(r"\b(?:Mr|Mrs|Ms|Miss|Mx|Dr)\.?\s+([A-Z][a-zA-Z'\-]+)").unwrap(),
        name_label: Regex::new(r"(?i)\b(?:patient name|name)\s*:\s*\S").unwrap(),
    })
}

#[derive(Debug, Clone)]
pub struct PhiFilter {
    surnames: HashSet<String>,
}

impl PhiFilter {
    pub fn new(surname_list: &str) -> Self {
        let surnames = surname_list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { surnames }
    }

    pub fn bundled() -> Self {
        Self::new(SURNAMES_TXT)
    }

    pub fn screen(&self, text: &str) -> Result<(), PhiRule> {
        let p = patterns();
        if p.dob.is_match(text) {
            return Err(PhiRule::DateOfBirth);
        }
        if p.long_number.is_match(text) {
            return Err(PhiRule::LongNumber);
        }
        if p.name_label.is_match(text) {
            return Err(PhiRule::NameLabel);
        }
        for cap in p.honorific.captures_iter(text) {
            if self.surnames.contains(&cap[1].to_lowercase()) {
                return Err(PhiRule::NamedPerson);
            }
        }
        Ok(())
    }

    pub fn screen_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<(), PhiRule> {
        texts.into_iter().try_for_each(|t| self.screen(t))
    }
}
