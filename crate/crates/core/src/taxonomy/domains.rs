use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::icd::parse_icd;
use super::TaxonomyError;

/// Clinical domain used for seed-code pools and domain breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    AdvancedIllness,
    Frailty,
    SDoH,
    General,
}

impl Domain {
    pub const TARGETED: [Domain; 3] = [Domain::AdvancedIllness, Domain::Frailty, Domain::SDoH];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::AdvancedIllness => "AdvancedIllness",
            Domain::Frailty => "Frailty",
            Domain::SDoH => "SDoH",
            Domain::General => "General",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "advancedillness" | "adv" => Ok(Domain::AdvancedIllness),
            "frailty" | "fra" => Ok(Domain::Frailty),
            "sdoh" => Ok(Domain::SDoH),
            "general" => Ok(Domain::General),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

/// Domain → ICD category membership, loaded from a versioned data file.
///
/// File format: `#domains version=<v>` header, then `Domain<TAB>entries`
/// where entries are comma-separated categories (`Z66`) or inclusive
/// category ranges (`Z55-Z65`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainSets {
    pub version: String,
    sets: BTreeMap<Domain, BTreeSet<String>>,
}

impl DomainSets {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut out = DomainSets::default();
        for (i, line) in text.lines().enumerate() {
            let no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with("# ") {
                continue;
            }
            if let Some(h) = line.strip_prefix("#domains") {
                out.version = h
                    .split_whitespace()
                    .find_map(|p| p.strip_prefix("version="))
                    .unwrap_or_default()
                    .to_string();
                continue;
            }
            let (name, entries) = line.split_once('\t').ok_or_else(|| TaxonomyError::Parse {
                line: no,
                message: "expected domain<TAB>categories".into(),
            })?;
            let domain: Domain = name.trim().parse().map_err(|m| TaxonomyError::Parse {
                line: no,
                message: m,
            })?;
            let set = out.sets.entry(domain).or_default();
            for entry in entries.split(',').map(str::trim).filter(|e| !e.is_empty()) {
                for cat in expand_entry(entry).map_err(|m| TaxonomyError::Parse {
                    line: no,
                    message: m,
                })? {
                    set.insert(cat);
                }
            }
        }
        Ok(out)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.values().all(BTreeSet::is_empty)
    }

    pub fn categories(&self, domain: Domain) -> impl Iterator<Item = &str> {
        self.sets
            .get(&domain)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Targeted domain owning `category`, if any.
    pub fn domain_of_category(&self, category: &str) -> Option<Domain> {
        self.sets
            .iter()
            .find(|(_, cats)| cats.contains(category))
            .map(|(d, _)| *d)
    }

    /// Domain tag used for seed pools: any targeted set, else `General`.
    pub fn pool_domain(&self, category: &str) -> Domain {
        self.domain_of_category(category).unwrap_or(Domain::General)
    }

    pub fn domains(&self) -> impl Iterator<Item = Domain> + '_ {
        self.sets.keys().copied()
    }
}

fn expand_entry(entry: &str) -> Result<Vec<String>, String> {
    let category = |s: &str| -> Result<String, String> {
        let c = parse_icd(s).map_err(|e| e.to_string())?;
        if c.normalized().len() != 3 {
            return Err(format!("{s:?} is not a 3-character category"));
        }
        Ok(c.normalized().to_string())
    };
    match entry.split_once('-') {
        None => Ok(vec![category(entry)?]),
        Some((a, b)) => {
            let (a, b) = (category(a)?, category(b)?);
            if a[..1] != b[..1] || a > b {
                return Err(format!("unsupported category range {entry:?}"));
            }
            // Ranges step through the numeric part; alphanumeric third
            // characters (e.g. I1A) must be listed explicitly.
            let lo: u32 = a[1..]
                .parse()
                .map_err(|_| format!("non-numeric range bound {a}"))?;
            let hi: u32 = b[1..]
                .parse()
                .map_err(|_| format!("non-numeric range bound {b}"))?;
            Ok((lo..=hi).map(|n| format!("{}{:02}", &a[..1], n)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_and_ranges() {
        let d =
            DomainSets::parse("#domains version=t\nSDoH\tZ55-Z57, Z65\nFrailty\tR54\n").unwrap();
        assert_eq!(d.version, "t");
        let sdoh: Vec<_> = d.categories(Domain::SDoH).collect();
        assert_eq!(sdoh, vec!["Z55", "Z56", "Z57", "Z65"]);
        assert_eq!(d.domain_of_category("R54"), Some(Domain::Frailty));
        assert_eq!(d.pool_domain("E11"), Domain::General);
    }

    #[test]
    fn rejects_unknown_domain() {
        assert!(DomainSets::parse("Astrology\tZ55\n").is_err());
    }
}
