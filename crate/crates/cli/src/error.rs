use std::path::Path;

use mcf_core::embedding::EmbeddingError;
use mcf_core::eval::EvalError;
use mcf_core::gateway::GatewayError;
use mcf_core::jsonl::JsonlError;
use mcf_core::prep::PrepError;
use mcf_core::synth::SynthError;
use mcf_core::taxonomy::TaxonomyError;
use mcf_review::ReviewError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

/// Every failure is classified by who has to act on it: the caller (usage),
/// the inputs (data) or the model/embedding endpoint (provider).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Provider(_) => EXIT_PROVIDER,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(_) | GatewayError::Audit(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Provider(e.to_string()),
        }
    }
}

fn embedding_is_provider(e: &EmbeddingError) -> bool {
    match e {
        EmbeddingError::ProviderUnavailable { .. }
        | EmbeddingError::ProviderRejected(_)
        | EmbeddingError::DimensionMismatch { .. }
        | EmbeddingError::Degenerate => true,
        EmbeddingError::Item { source, .. } => embedding_is_provider(source),
        _ => false,
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        if embedding_is_provider(&e) {
            CliError::Provider(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Gateway(g) => g.into(),
            SynthError::Embedding(g) => g.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(TaxonomyError, PrepError, EvalError, ReviewError, JsonlError);
