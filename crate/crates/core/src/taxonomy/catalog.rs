use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cpt::parse_cpt;
use super::icd::{parse_icd, IcdCode};
use super::TaxonomyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "ICD10CM")]
    Icd10Cm,
    #[serde(rename = "CPT")]
    Cpt,
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeSystem::Icd10Cm => "ICD10CM",
            CodeSystem::Cpt => "CPT",
        })
    }
}

impl FromStr for CodeSystem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ICD10CM" | "ICD" | "ICD-10-CM" => Ok(CodeSystem::Icd10Cm),
            "CPT" => Ok(CodeSystem::Cpt),
            other => Err(format!("unknown code system {other:?}")),
        }
    }
}

/// Labelled inclusive range of categories (ICD) or codes (CPT).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRange {
    pub label: String,
    pub start: String,
    pub end: String,
}

impl CodeRange {
    pub fn contains(&self, key: &str) -> bool {
        self.start.as_str() <= key && key <= self.end.as_str()
    }
}

/// A validated, version-pinned code universe. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCatalog {
    pub system: CodeSystem,
    pub version: String,
    entries: BTreeMap<String, String>,
    chapters: Vec<CodeRange>,
    blocks: Vec<CodeRange>,
    specialties: Vec<CodeRange>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Codes,
    Chapters,
    Blocks,
    Specialties,
}

impl CodeCatalog {
    pub fn load(path: impl AsRef<Path>, system: CodeSystem) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, system)
    }

    pub fn parse(text: &str, system: CodeSystem) -> Result<Self, TaxonomyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

        let (header_no, header) =
            lines
                .by_ref()
                .find(|(_, l)| !l.trim().is_empty())
                .ok_or(TaxonomyError::Parse {
                    line: 1,
                    message: "empty catalog file".into(),
                })?;
        let (declared, version) = parse_header(header_no, header)?;
        if declared != system {
            return Err(TaxonomyError::SystemMismatch {
                expected: system,
                found: declared,
            });
        }

        let mut catalog = CodeCatalog {
            system,
            version,
            entries: BTreeMap::new(),
            chapters: Vec::new(),
            blocks: Vec::new(),
            specialties: Vec::new(),
        };

        let mut section = Section::Codes;
        for (no, line) in lines {
            if line.trim().is_empty() || line.starts_with("# ") {
                continue;
            }
            if let Some(marker) = line.strip_prefix('#') {
                section = match (marker.trim(), system) {
                    ("chapters", CodeSystem::Icd10Cm) => Section::Chapters,
                    ("blocks", CodeSystem::Icd10Cm) => Section::Blocks,
                    ("specialties", CodeSystem::Cpt) => Section::Specialties,
                    (m, _) => {
                        return Err(TaxonomyError::Parse {
                            line: no,
                            message: format!("unknown or misplaced section #{m} for {system}"),
                        })
                    }
                };
                continue;
            }

            let fields: Vec<&str> = line.split('\t').collect();
            match section {
                Section::Codes => {
                    if fields.len() != 2 {
                        return Err(TaxonomyError::Parse {
                            line: no,
                            message: format!(
                                "expected code<TAB>description, got {} fields",
                                fields.len()
                            ),
                        });
                    }
                    let key =
                        catalog
                            .normalize_key(fields[0])
                            .map_err(|e| TaxonomyError::Parse {
                                line: no,
                                message: e.to_string(),
                            })?;
                    let desc = fields[1].trim();
                    if desc.is_empty() {
                        return Err(TaxonomyError::Parse {
                            line: no,
                            message: "empty description".into(),
                        });
                    }
                    if catalog.entries.contains_key(&key) {
                        return Err(TaxonomyError::DuplicateCode {
                            code: key,
                            line: no,
                        });
                    }
                    catalog.entries.insert(key, desc.to_string());
                }
                Section::Chapters | Section::Blocks | Section::Specialties => {
                    let range = parse_range(no, &fields, system)?;
                    let target = match section {
                        Section::Chapters => &mut catalog.chapters,
                        Section::Blocks => &mut catalog.blocks,
                        _ => &mut catalog.specialties,
                    };
                    if let Some(prev) = target.last() {
                        if range.start <= prev.end {
                            return Err(TaxonomyError::InvalidRange {
                                line: no,
                                message: format!(
                                    "range {}-{} overlaps or precedes {}-{}",
                                    range.start, range.end, prev.start, prev.end
                                ),
                            });
                        }
                    }
                    target.push(range);
                }
            }
        }

        catalog.check_coverage()?;
        Ok(catalog)
    }

    fn check_coverage(&self) -> Result<(), TaxonomyError> {
        if self.system != CodeSystem::Icd10Cm {
            return Ok(());
        }
        for key in self.entries.keys() {
            let category = &key[..3];
            if !self.chapters.is_empty() && find_range(&self.chapters, category).is_none() {
                return Err(TaxonomyError::UnmappedCategory {
                    category: category.to_string(),
                    table: "chapters",
                });
            }
            if !self.blocks.is_empty() && find_range(&self.blocks, category).is_none() {
                return Err(TaxonomyError::UnmappedCategory {
                    category: category.to_string(),
                    table: "blocks",
                });
            }
        }
        Ok(())
    }

    /// Normalizes a code for lookup in this catalog's system.
    pub fn normalize_key(&self, code: &str) -> Result<String, TaxonomyError> {
        match self.system {
            CodeSystem::Icd10Cm => parse_icd(code).map(|c| c.normalized().to_string()),
            CodeSystem::Cpt => parse_cpt(code).map(|c| c.as_str().to_string()),
        }
    }

    /// Renders a stored key in its canonical display form (dotted for ICD).
    pub fn display_code(&self, key: &str) -> String {
        match self.system {
            CodeSystem::Icd10Cm => parse_icd(key)
                .map(|c| c.render())
                .unwrap_or_else(|_| key.to_string()),
            CodeSystem::Cpt => key.to_string(),
        }
    }

    pub fn describe(&self, code: &str) -> Option<&str> {
        let key = self.normalize_key(code).ok()?;
        self.entries.get(&key).map(String::as_str)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.describe(code).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries as (normalized key, description), in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn chapters(&self) -> &[CodeRange] {
        &self.chapters
    }

    pub fn blocks(&self) -> &[CodeRange] {
        &self.blocks
    }

    pub fn specialties(&self) -> &[CodeRange] {
        &self.specialties
    }

    pub fn chapter_of(&self, code: &IcdCode) -> Result<&CodeRange, TaxonomyError> {
        self.range_for(&self.chapters, code.category(), "chapters")
    }

    pub fn block_of(&self, code: &IcdCode) -> Result<&CodeRange, TaxonomyError> {
        self.range_for(&self.blocks, code.category(), "blocks")
    }

    pub fn chapter_of_category(&self, category: &str) -> Result<&CodeRange, TaxonomyError> {
        self.range_for(&self.chapters, category, "chapters")
    }

    fn range_for<'a>(
        &self,
        ranges: &'a [CodeRange],
        category: &str,
        table: &'static str,
    ) -> Result<&'a CodeRange, TaxonomyError> {
        find_range(ranges, category).ok_or_else(|| TaxonomyError::UnmappedCategory {
            category: category.to_string(),
            table,
        })
    }

    pub fn specialty(&self, name: &str) -> Option<&CodeRange> {
        self.specialties
            .iter()
            .find(|r| r.label.eq_ignore_ascii_case(name))
    }

    /// Catalog keys inside an inclusive range, in key order.
    pub fn codes_in(&self, range: &CodeRange) -> Vec<&str> {
        self.entries
            .range(range.start.clone()..=range.end.clone())
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

fn find_range<'a>(ranges: &'a [CodeRange], key: &str) -> Option<&'a CodeRange> {
    // Ranges are sorted and disjoint.
    let idx = ranges.partition_point(|r| r.start.as_str() <= key);
    idx.checked_sub(1)
        .map(|i| &ranges[i])
        .filter(|r| r.contains(key))
}

fn parse_header(no: usize, header: &str) -> Result<(CodeSystem, String), TaxonomyError> {
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| TaxonomyError::Parse {
            line: no,
            message: "first line must be a `#system=<ICD10CM|CPT> version=<string>` header".into(),
        })?;
    let mut system = None;
    let mut version = None;
    for part in body.split_whitespace() {
        match part.split_once('=') {
            Some(("system", v)) => {
                system = Some(v.parse::<CodeSystem>().map_err(|m| TaxonomyError::Parse {
                    line: no,
                    message: m,
                })?)
            }
            Some(("version", v)) if !v.is_empty() => version = Some(v.to_string()),
            _ => {
                return Err(TaxonomyError::Parse {
                    line: no,
                    message: format!("unexpected header field {part:?}"),
                })
            }
        }
    }
    match (system, version) {
        (Some(s), Some(v)) => Ok((s, v)),
        _ => Err(TaxonomyError::Parse {
            line: no,
            message: "header needs both system= and version=".into(),
        }),
    }
}

fn parse_range(no: usize, fields: &[&str], system: CodeSystem) -> Result<CodeRange, TaxonomyError> {
    if fields.len() != 3 {
        return Err(TaxonomyError::Parse {
            line: no,
            message: format!(
                "expected label<TAB>start<TAB>end, got {} fields",
                fields.len()
            ),
        });
    }
    let bound = |s: &str| -> Result<String, TaxonomyError> {
        let invalid = |m: String| TaxonomyError::InvalidRange {
            line: no,
            message: m,
        };
        match system {
            CodeSystem::Icd10Cm => {
                let code = parse_icd(s).map_err(|e| invalid(e.to_string()))?;
                if code.normalized().len() != 3 {
                    return Err(invalid(format!(
                        "range bound {s:?} must be a 3-character category"
                    )));
                }
                Ok(code.normalized().to_string())
            }
            CodeSystem::Cpt => parse_cpt(s)
                .map(|c| c.as_str().to_string())
                .map_err(|e| invalid(e.to_string())),
        }
    };
    let label = fields[0].trim();
    if label.is_empty() {
        return Err(TaxonomyError::InvalidRange {
            line: no,
            message: "empty range label".into(),
        });
    }
    let (start, end) = (bound(fields[1])?, bound(fields[2])?);
    if start > end {
        return Err(TaxonomyError::InvalidRange {
            line: no,
            message: format!("range start {start} is after end {end}"),
        });
    }
    Ok(CodeRange {
        label: label.to_string(),
        start,
        end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "#system=ICD10CM version=t1\nE11\tType 2 diabetes mellitus\nE11.42\tT2DM with polyneuropathy\nI10\tEssential hypertension\n";

    #[test]
    fn loads_three_entries() {
        let c = CodeCatalog::parse(SMALL, CodeSystem::Icd10Cm).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.version, "t1");
        assert_eq!(c.describe("E1142"), Some("T2DM with polyneuropathy"));
        assert!(c.contains("i10"));
    }

    #[test]
    fn rejects_duplicates() {
        let text = format!("{SMALL}E1142\tagain\n");
        match CodeCatalog::parse(&text, CodeSystem::Icd10Cm) {
            Err(TaxonomyError::DuplicateCode { code, line }) => {
                assert_eq!(code, "E1142");
                assert_eq!(line, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_cpt_code_is_a_parse_error_with_line() {
        let text = "#system=CPT version=x\n99213\tOffice visit\n2740\tbroken\n";
        match CodeCatalog::parse(text, CodeSystem::Cpt) {
            Err(TaxonomyError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_system_must_match() {
        assert!(matches!(
            CodeCatalog::parse(SMALL, CodeSystem::Cpt),
            Err(TaxonomyError::SystemMismatch { .. })
        ));
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let text = format!("{SMALL}#chapters\nA\tA00\tE89\nB\tE50\tI99\n");
        assert!(matches!(
            CodeCatalog::parse(&text, CodeSystem::Icd10Cm),
            Err(TaxonomyError::InvalidRange { line: 7, .. })
        ));
    }

    #[test]
    fn uncovered_category_rejected() {
        let text = format!("{SMALL}#chapters\nEndocrine\tE00\tE89\n");
        assert!(matches!(
            CodeCatalog::parse(&text, CodeSystem::Icd10Cm),
            Err(TaxonomyError::UnmappedCategory { .. })
        ));
    }

    #[test]
    fn chapter_lookup_and_unmapped() {
        let text = format!("{SMALL}#chapters\nEndocrine\tE00\tE89\nCirculatory\tI00\tI99\n");
        let c = CodeCatalog::parse(&text, CodeSystem::Icd10Cm).unwrap();
        let e = parse_icd("E11.42").unwrap();
        assert_eq!(c.chapter_of(&e).unwrap().label, "Endocrine");
        let u = parse_icd("U99.9").unwrap();
        assert!(matches!(
            c.chapter_of(&u),
            Err(TaxonomyError::UnmappedCategory { .. })
        ));
    }

    #[test]
    fn specialty_codes() {
        let text = "#system=CPT version=x\n99213\tOffice visit\n93000\tECG\n#specialties\nCardiology\t92920\t93799\nEM\t99201\t99499\n";
        let c = CodeCatalog::parse(text, CodeSystem::Cpt).unwrap();
        let em = c.specialty("em").unwrap();
        assert_eq!(c.codes_in(em), vec!["99213"]);
        assert!(c.specialty("astrology").is_none());
    }
}
