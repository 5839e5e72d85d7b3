//! The `dlc` command-line front end.
//!
//! Four subcommands: `decode` runs seeded sessions and writes JSONL traces,
//! `sweep` evaluates a hyperparameter grid into a CSV, `eval` recomputes
//! hallucination metrics over a trace directory and `export` turns a trace
//! into plot-ready CSV.
//!
//! Exit codes: 0 on success, 1 when a session aborts or an input trace is
//! malformed, 2 on configuration errors. Errors go to stderr prefixed with
//! `ERROR <code>:`.

mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrator::ModulationMode;

pub use run::{
    write_sweep_csv, RunManifest, ScorerChoice, SweepGrid, SweepRow, WorldChoice, MANIFEST_FILE,
    SUMMARY_FILE, SWEEP_FILE,
};

/// Environment variable overriding the target of `--scorer remote`.
pub const SCORER_URL_ENV: &str = "DLC_SCORER_URL";

#[derive(Debug, Parser)]
#[command(
    name = "dlc",
    version,
    about = "Dynamic logits calibration over seeded drift worlds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode captions and write one trace per session.
    Decode(DecodeArgs),
    /// Evaluate every cell of a hyperparameter grid.
    Sweep(SweepArgs),
    /// Hallucination metrics over a directory of traces.
    Eval(EvalArgs),
    /// Plot data from a single trace.
    Export(ExportArgs),
}

/// Flags shared by `decode` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// World spec file (TOML or JSON) or `seed:N` for the default spec.
    #[arg(long, default_value = "seed:0")]
    pub world: String,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value = "literal")]
    pub mode: ModulationMode,
    /// `synthetic`, `replay:<path>`, `remote:<url>` or `remote` with the URL
    /// taken from DLC_SCORER_URL.
    #[arg(long, default_value = "synthetic")]
    pub scorer: String,
    /// Session i decodes image i modulo the world's image count.
    #[arg(long, default_value_t = 8)]
    pub sessions: usize,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    /// Sampler seed of session 0; session i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite an output directory that already holds a manifest.
    #[arg(long)]
    pub force: bool,
    /// Disable calibration entirely.
    #[arg(long)]
    pub vanilla: bool,
    /// Use the isolated score alone as the combined score.
    #[arg(long)]
    pub disable_ccta: bool,
    /// Use the contextual score alone as the combined score.
    #[arg(long)]
    pub disable_ita: bool,
    /// Hold the intervention strength at alpha regardless of the baseline.
    #[arg(long)]
    pub constant_lambda: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub window_n: usize,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    /// `greedy`, `nucleus:<p>`, `topk:<k>` or `temp:<t>,topk:<k>`.
    #[arg(long, default_value = "greedy")]
    pub sampler: String,
}

/// Grid flags accept comma-separated lists or repetition. Samplers are
/// repeated only, since `temp:<t>,topk:<k>` contains a comma.
#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub window_n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub top_k: Vec<usize>,
    #[arg(long, default_value = "greedy")]
    pub sampler: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of `*.jsonl` traces.
    pub traces: PathBuf,
    /// Defaults to the world recorded in the directory's manifest, then to
    /// the trace headers' world seed.
    #[arg(long)]
    pub world: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ExportKind {
    /// `step,ccta,baseline`
    Trajectory,
    /// `step,rank,token,logit_before,ccta,ita`
    Snapshots,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    pub trace: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportKind,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_with<I, T>(
    args: I,
    scorer_url: Option<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.trim().trim_start_matches("error: ");
            let _ = writeln!(stderr, "ERROR 2: {msg}");
            return 2;
        }
    };
    match execute(cli.command, scorer_url, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "ERROR {}: {e}", e.code());
            e.code()
        }
    }
}

/// Entry point for the binary: real arguments, environment and streams.
pub fn main_from_env() -> i32 {
    let url = std::env::var(SCORER_URL_ENV).ok().filter(|s| !s.is_empty());
    run_with(
        std::env::args_os(),
        url,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

fn execute(cmd: Command, scorer_url: Option<String>, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Decode(a) => run::decode(&a, scorer_url, out),
        Command::Sweep(a) => run::sweep(&a, scorer_url, out),
        Command::Eval(a) => run::eval(&a, out),
        Command::Export(a) => run::export(&a, out),
    }
}
