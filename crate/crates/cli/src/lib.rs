//! `mcf`: one entry point for catalog checks, corpus generation and
//! labeling, training-data prep, evaluation and expert review.

mod args;
mod corpus;
mod error;
mod evaluate;
pub mod manifest;
mod providers;
mod review;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, EXIT_DATA, EXIT_OK, EXIT_PROVIDER, EXIT_USAGE};

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mcf: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let g = args::Globals {
        seed: cli.seed,
        mock: cli.mock,
    };
    match cli.command {
        Command::Catalog(args::CatalogCmd::Validate(a)) => corpus::catalog_validate(&g, a),
        Command::Index(args::IndexCmd::Build(a)) => corpus::index_build(&g, a),
        Command::Gen(a) => corpus::gen(&g, a),
        Command::Label(a) => corpus::label(&g, a),
        Command::Predict(a) => corpus::predict(&g, a),
        Command::Prep(a) => evaluate::prep(&g, a),
        Command::Evaluate(a) => evaluate::evaluate(&g, a),
        Command::Analyze(args::AnalyzeCmd::Freq(a)) => evaluate::analyze_freq(&g, a),
        Command::Analyze(args::AnalyzeCmd::Outliers(a)) => evaluate::analyze_outliers(&g, a),
        Command::ExpertEval(a) => review::expert_eval(&g, a),
        Command::ServeReview(a) => review::serve_review(&g, a),
        Command::VerifyRun(a) => review::verify_run(a),
    }
}
