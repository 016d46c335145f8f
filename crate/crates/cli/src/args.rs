use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcf_core::eval::{MatchSemantics, DEFAULT_MIN_CASES};
use mcf_core::prep::{
    AugmentMode, DEFAULT_AUGMENT_FRACTION, DEFAULT_DEDUPE_THRESHOLD, DEFAULT_MAX_LEN,
};
use mcf_core::synth::CorpusKind;
use mcf_core::taxonomy::CodeSystem;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mcf",
    version,
    about = "Synthetic medical coding corpora, training data prep and hierarchical evaluation"
)]
pub struct Cli {
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use the offline mock chat and embedding providers.
    #[arg(long, global = true)]
    pub mock: bool,
    #[command(subcommand)]
    pub command: Command,
}

pub struct Globals {
    pub seed: u64,
    pub mock: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Code catalog checks.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Embedding index over a catalog.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Generate synthetic charts.
    Gen(GenArgs),
    /// Assign evidence-linked codes to generated charts.
    Label(LabelArgs),
    /// Predict codes for charts with the configured chat model.
    Predict(PredictArgs),
    /// Dedupe, split, augment, render and pack a labeled corpus.
    Prep(PrepArgs),
    /// Score predictions against gold labels at every hierarchy level.
    Evaluate(EvaluateArgs),
    /// Follow-up analyses of an evaluation report.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Score predictions against clinician-accepted labels.
    ExpertEval(ExpertEvalArgs),
    /// Serve the review API (and optional UI bundle).
    ServeReview(ServeReviewArgs),
    /// Re-hash the files recorded in a run manifest.
    VerifyRun(VerifyRunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Icd,
    Cpt,
}

impl Kind {
    pub fn corpus(self) -> CorpusKind {
        match self {
            Kind::Icd => CorpusKind::Icd,
            Kind::Cpt => CorpusKind::Cpt,
        }
    }

    pub fn system(self) -> CodeSystem {
        match self {
            Kind::Icd => CodeSystem::Icd10Cm,
            Kind::Cpt => CodeSystem::Cpt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Set,
    Multiset,
}

impl From<Semantics> for MatchSemantics {
    fn from(s: Semantics) -> Self {
        match s {
            Semantics::Set => MatchSemantics::Set,
            Semantics::Multiset => MatchSemantics::Multiset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentModeArg {
    Add,
    Replace,
}

impl From<AugmentModeArg> for AugmentMode {
    fn from(m: AugmentModeArg) -> Self {
        match m {
            AugmentModeArg::Add => AugmentMode::Add,
            AugmentModeArg::Replace => AugmentMode::Replace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerArg {
    Whitespace,
    Byte,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Eval,
    All,
}

/// Catalog source shared by most commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CatalogArgs {
    /// Catalog TSV; the bundled sample catalog when omitted.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Domain membership TSV; the bundled file when omitted.
    #[arg(long)]
    pub domain_sets: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChatArgs {
    /// Chat model name sent to the endpoint at MCF_LLM_BASE_URL.
    #[arg(long, default_value = "default")]
    pub model: String,
    /// JSON-lines of scripted mock responses (with --mock).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Stop once this many prompt + completion tokens have been spent.
    #[arg(long)]
    pub token_budget: Option<u64>,
    /// Minimum milliseconds between chat calls.
    #[arg(long, default_value_t = 0)]
    pub min_interval_ms: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    /// Embedding model name sent to the endpoint at MCF_EMBED_BASE_URL.
    #[arg(long, default_value = "default")]
    pub embed_model: String,
    /// Embedding dimension (256 for the mock embedder).
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    /// Parse a catalog and check its hierarchy tables.
    Validate(CatalogValidateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CatalogValidateArgs {
    #[arg(long, value_enum, default_value = "icd")]
    pub system: Kind,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Directory for the validation summary and run manifest.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Embed every catalog entry and write the index file.
    Build(IndexBuildArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexBuildArgs {
    #[arg(long, value_enum, default_value = "icd")]
    pub system: Kind,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint file; an interrupted build resumes from it.
    #[arg(long)]
    pub progress: Option<PathBuf>,
    /// Also export `{code, description, vector}` lines here.
    #[arg(long)]
    pub export_jsonl: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    /// Corpus directory.
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    /// Charts to generate, spread evenly over the targets.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// ICD domains (comma separated).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "AdvancedIllness,Frailty,SDoH"
    )]
    pub domains: Vec<String>,
    /// CPT specialties (comma separated); every catalog specialty when omitted.
    #[arg(long, value_delimiter = ',')]
    pub specialties: Vec<String>,
    /// Secure directory of source notes for structure templates.
    #[arg(long)]
    pub secure_dir: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub chat: ChatArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    /// Corpus directory written by `gen`.
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    /// Prebuilt index; built in memory when omitted.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Candidates retrieved per evidence window (ICD).
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub chat: ChatArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub charts: PathBuf,
    /// Split manifest from `prep`; restricts prediction to one part.
    #[arg(long)]
    pub split_manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    pub split: SplitPart,
    /// Predictions file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt template directory; the bundled templates when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Error rate of the mock predictor.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub chat: ChatArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PrepArgs {
    #[arg(long, value_enum, default_value = "icd")]
    pub kind: Kind,
    /// Labeled corpus directory (charts.jsonl + gold.jsonl).
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "prep")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DEDUPE_THRESHOLD)]
    pub dedupe_threshold: f64,
    /// Split and augmentation seed; derived from --seed when omitted.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_AUGMENT_FRACTION)]
    pub augment_fraction: f64,
    #[arg(long, value_enum, default_value = "replace")]
    pub augment_mode: AugmentModeArg,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, value_enum, default_value = "whitespace")]
    pub tokenizer: TokenizerArg,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "icd")]
    pub system: Kind,
    /// Hierarchy levels to report, e.g. `0-4` or `0,3`.
    #[arg(long, default_value = "0-4")]
    pub levels: String,
    #[arg(long, value_enum, default_value = "set")]
    pub semantics: Semantics,
    /// Training-split gold labels, for the frequency analysis.
    #[arg(long)]
    pub train_gold: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_CASES)]
    pub min_cases: usize,
    /// Catalog version the gold labels were produced with (read from the
    /// producing run's manifest when omitted).
    #[arg(long)]
    pub gold_catalog_version: Option<String>,
    #[arg(long)]
    pub pred_catalog_version: Option<String>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Per-category F1 against training frequency.
    Freq(AnalyzeFreqArgs),
    /// Categories whose F1 falls below the lower IQR fence.
    Outliers(AnalyzeOutliersArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeFreqArgs {
    /// report.json written by `evaluate`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub train_gold: PathBuf,
    #[arg(long, default_value = "analysis")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeOutliersArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_CASES)]
    pub min_cases: usize,
    #[arg(long, default_value = "analysis")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExpertEvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory holding an exported expert ground truth.
    #[arg(long, conflicts_with_all = ["corpus", "gold", "store"])]
    pub ground_truth: Option<PathBuf>,
    /// Charts under review (with --gold and --store, exports first).
    #[arg(long, requires_all = ["gold", "store"])]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Decision log.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// `latest`, `unanimous` or `reviewer:<id>`.
    #[arg(long, default_value = "latest")]
    pub mode: String,
    /// Export even when some labels are undecided.
    #[arg(long)]
    pub force: bool,
    #[arg(long, value_enum, default_value = "set")]
    pub semantics: Semantics,
    #[arg(long)]
    pub domain_sets: Option<PathBuf>,
    #[arg(long, default_value = "expert")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeReviewArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8642)]
    pub port: u16,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Where `POST /api/export` writes the ground truth.
    #[arg(long, default_value = "review_export")]
    pub export_dir: PathBuf,
    /// ICD catalog for code lookups; the bundled one when omitted.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Static review UI bundle served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyRunArgs {
    /// A `<command>.run_manifest.json` file.
    pub manifest: PathBuf,
}
