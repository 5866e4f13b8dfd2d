//! `mixedform`: parse, fit and translate mixed-model formulas.
//!
//! Exit codes: 0 success, 1 user or input error, 2 fit did not converge.
//! Errors are one line on stderr, `E_<KIND>: message`.

mod commands;
mod json;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "mixedform",
    version,
    about = "Mixed-model formula compiler and REML fitter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand and lint formulas; with --data, also lower the random terms.
    Parse(ModelArgs),
    /// Fit a model by REML and report estimates.
    Fit(FitArgs),
    /// Translate one random term (or a residual formula) between dialects.
    Translate(TranslateArgs),
    /// Regenerate the synthetic corpus entries.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Fixed formula, `response ~ terms`; grouped random terms may be inline.
    #[arg(long)]
    pub formula: Option<String>,
    /// One-sided random formula, `~ terms`.
    #[arg(long)]
    pub random: Option<String>,
    /// One-sided residual formula, `~ structure`.
    #[arg(long)]
    pub rcov: Option<String>,
    /// CSV data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column type override, `column=factor` or `column=numeric`.
    #[arg(long = "schema", value_name = "COLUMN=TYPE")]
    pub schema: Vec<String>,
    /// Pedigree CSV attached to a factor, `factor=path`.
    #[arg(long = "pedigree", value_name = "FACTOR=PATH")]
    pub pedigree: Vec<String>,
    /// Inverse relationship matrix (triplet CSV) attached to a factor, `factor=path`.
    #[arg(long = "ginverse", value_name = "FACTOR=PATH")]
    pub ginverse: Vec<String>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative objective change for convergence.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Starting variance parameters in natural scale, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DialectArg {
    Grouped,
    Structural,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Term text, e.g. `(1 | site:geno)` or `us(site):id(geno)`.
    pub term: String,
    #[arg(long, value_enum)]
    pub from: DialectArg,
    #[arg(long, value_enum)]
    pub to: DialectArg,
    /// Treat the term as a residual formula.
    #[arg(long)]
    pub rcov: bool,
    /// CSV data file, needed when the translation depends on levels.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "schema", value_name = "COLUMN=TYPE")]
    pub schema: Vec<String>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = mixedform_core::corpus::DEFAULT_SEED)]
    pub seed: u64,
}

fn main() -> ExitCode {
    // MIXEDFORM_THREADS is reserved; every fit runs on one thread.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("E_USAGE: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Parse(a) => commands::parse(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Translate(a) => commands::translate(&a),
        Command::Generate(a) => commands::generate(&a),
    };
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            for line in &out.stderr {
                eprintln!("{line}");
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("{}: {}", e.code(), single_line(&e.to_string()));
            if let Some(context) = e.context() {
                eprintln!("{context}");
            }
            ExitCode::from(1)
        }
    }
}

fn single_line(s: &str) -> String {
    s.lines().map(str::trim).collect::<Vec<_>>().join(" ")
}
