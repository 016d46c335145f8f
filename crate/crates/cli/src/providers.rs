//! Catalogs, domain sets and provider construction from flags and env.

use std::sync::Arc;
use std::time::Duration;

use mcf_core::embedding::{EmbeddingProvider, HttpEmbedder, MockEmbedder, DEFAULT_MOCK_DIM};
use mcf_core::gateway::{ChatProvider, Gateway, GatewayConfig, HttpChatProvider, MockProvider};
use mcf_core::http::HttpConfig;
use mcf_core::taxonomy::{bundled, CodeCatalog, CodeSystem, DomainSets};

use crate::args::{CatalogArgs, ChatArgs, EmbedArgs, Globals};
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

pub const EMBED_URL_ENV: &str = "MCF_EMBED_BASE_URL";
pub const EMBED_KEY_ENV: &str = "MCF_EMBED_API_KEY";
const DEFAULT_HTTP_EMBED_DIM: usize = 1536;

pub fn bundled_name(system: CodeSystem) -> &'static str {
    match system {
        CodeSystem::Icd10Cm => "icd10cm.tsv",
        CodeSystem::Cpt => "cpt.tsv",
    }
}

pub const BUNDLED_DOMAINS: &str = "domains.tsv";

/// Content of a bundled data file, by the name used in manifests.
pub fn bundled_content(name: &str) -> Option<&'static str> {
    match name {
        "icd10cm.tsv" => Some(bundled::ICD10CM_TSV),
        "cpt.tsv" => Some(bundled::CPT_TSV),
        "domains.tsv" => Some(bundled::DOMAINS_TSV),
        _ => None,
    }
}

/// Loads the catalog and records it (file or bundled) as a run input.
pub fn load_catalog(
    path: Option<&std::path::Path>,
    system: CodeSystem,
    m: &mut ManifestBuilder,
) -> Result<CodeCatalog, CliError> {
    let catalog = match path {
        Some(p) => {
            let c = CodeCatalog::load(p, system)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            m.input(p)?;
            c
        }
        None => {
            let name = bundled_name(system);
            m.bundled_input(name, bundled_content(name).expect("bundled catalog"));
            match system {
                CodeSystem::Icd10Cm => bundled::icd_catalog(),
                CodeSystem::Cpt => bundled::cpt_catalog(),
            }
        }
    };
    m.catalog(system, &catalog.version);
    Ok(catalog)
}

pub fn load_domains(
    path: Option<&std::path::Path>,
    m: &mut ManifestBuilder,
) -> Result<DomainSets, CliError> {
    match path {
        Some(p) => {
            let d =
                DomainSets::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            m.input(p)?;
            Ok(d)
        }
        None => {
            m.bundled_input(BUNDLED_DOMAINS, bundled::DOMAINS_TSV);
            Ok(bundled::domain_sets())
        }
    }
}

pub fn catalogs(
    a: &CatalogArgs,
    system: CodeSystem,
    m: &mut ManifestBuilder,
) -> Result<(CodeCatalog, DomainSets), CliError> {
    Ok((
        load_catalog(a.catalog.as_deref(), system, m)?,
        load_domains(a.domain_sets.as_deref(), m)?,
    ))
}

/// Chat gateway: the mock (optionally scripted) with `--mock`, otherwise the
/// endpoint named by `MCF_LLM_BASE_URL`.
pub fn gateway(
    g: &Globals,
    a: &ChatArgs,
    mock: impl FnOnce(MockProvider) -> MockProvider,
    m: &mut ManifestBuilder,
) -> Result<Gateway, CliError> {
    let provider: Arc<dyn ChatProvider> = if g.mock {
        let mut p = MockProvider::new();
        if let Some(script) = &a.script {
            p = p
                .load_script(script)
                .map_err(|e| CliError::Data(format!("{}: {e}", script.display())))?;
            m.input(script)?;
        }
        Arc::new(mock(p))
    } else {
        Arc::new(HttpChatProvider::from_env(&a.model).ok_or_else(|| {
            CliError::Usage("no chat endpoint configured: set MCF_LLM_BASE_URL (and MCF_LLM_API_KEY) or pass --mock".into())
        })?)
    };
    let config = GatewayConfig {
        token_budget: a.token_budget,
        min_interval: Duration::from_millis(a.min_interval_ms),
        ..GatewayConfig::default()
    };
    Ok(Gateway::new(provider, config))
}

/// Embedding provider; `dim` from an existing index overrides the flag.
pub fn embedder(
    g: &Globals,
    a: &EmbedArgs,
    dim: Option<usize>,
) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    if g.mock {
        let dim = dim.or(a.embed_dim).unwrap_or(DEFAULT_MOCK_DIM);
        if dim == 0 {
            return Err(CliError::Usage("--embed-dim must be positive".into()));
        }
        return Ok(Box::new(MockEmbedder::new(dim)));
    }
    let http = HttpConfig::from_env(EMBED_URL_ENV, EMBED_KEY_ENV).ok_or_else(|| {
        CliError::Usage("no embedding endpoint configured: set MCF_EMBED_BASE_URL (and MCF_EMBED_API_KEY) or pass --mock".into())
    })?;
    let dim = dim.or(a.embed_dim).unwrap_or(DEFAULT_HTTP_EMBED_DIM);
    Ok(Box::new(HttpEmbedder::new(http, &a.embed_model, dim)))
}
