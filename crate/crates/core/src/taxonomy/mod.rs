//! ICD-10-CM and CPT code parsing, catalogs and hierarchy lookups.
//!
//! ICD codes are compared in normalized form (dot stripped, uppercase).
//! Hierarchy levels are fixed-length prefixes: category (3), subcategory (4),
//! fine-grained (5) and the exact code. Chapter, block and specialty ranges
//! come from the catalog file rather than compiled-in tables.

mod catalog;
mod cpt;
mod domains;
mod icd;

pub use catalog::{CodeCatalog, CodeRange, CodeSystem};
pub use cpt::{parse_cpt, CptCode};
pub use domains::{Domain, DomainSets};
pub use icd::{parse_icd, truncate_to_level, CodeLevel, IcdCode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed code {input:?} at position {position}: {reason}")]
    MalformedCode {
        input: String,
        position: usize,
        reason: String,
    },
    #[error("category {category} is not covered by any {table} range")]
    UnmappedCategory {
        category: String,
        table: &'static str,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate code {code}")]
    DuplicateCode { code: String, line: usize },
    #[error("line {line}: invalid range: {message}")]
    InvalidRange { line: usize, message: String },
    #[error("catalog declares system {found}, expected {expected}")]
    SystemMismatch {
        expected: CodeSystem,
        found: CodeSystem,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Catalogs and domain sets shipped with the crate.
pub mod bundled {
    use super::{CodeCatalog, CodeSystem, DomainSets};

    pub const ICD10CM_TSV: &str = include_str!("../../data/icd10cm.tsv");
    pub const CPT_TSV: &str = include_str!("../../data/cpt.tsv");
    pub const DOMAINS_TSV: &str = include_str!("../../data/domains.tsv");
    pub const SURNAMES_TXT: &str = include_str!("../../data/surnames.txt");

    pub fn icd_catalog() -> CodeCatalog {
        CodeCatalog::parse(ICD10CM_TSV, CodeSystem::Icd10Cm).expect("bundled ICD catalog is valid")
    }

    pub fn cpt_catalog() -> CodeCatalog {
        CodeCatalog::parse(CPT_TSV, CodeSystem::Cpt).expect("bundled CPT catalog is valid")
    }

    pub fn domain_sets() -> DomainSets {
        DomainSets::parse(DOMAINS_TSV).expect("bundled domain sets are valid")
    }
}
