//! `ptoda`: batch front end for the reduction compiler.
//!
//! Every command prints one JSON document on standard output. Exit codes:
//! 0 success, 1 verdict false (`decide --exit-verdict`), 2 input error,
//! 3 oracle error, 4 verification failure.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use commands::{Failure, Output, VerifyArgs};

#[derive(Parser)]
#[command(name = "ptoda", version, about = "Reduce quantified coordinate formulas to Poincaré-polynomial queries")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a formula document for multi-homogeneity and the zero-block condition.
    Validate { path: PathBuf },
    /// Realize a formula as a support-pattern set.
    Patterns { path: PathBuf },
    /// Value a pattern set, formula or oracle request with the built-in oracle.
    Poincare { path: PathBuf },
    /// Compile a formula into Θ and its polynomial pipeline.
    Reduce { path: PathBuf },
    /// Decide a sentence.
    Decide {
        path: PathBuf,
        /// External oracle command (line-delimited JSON on stdin/stdout).
        #[arg(long, env = "PTODA_ORACLE")]
        oracle: Option<String>,
        /// Seconds to wait for each oracle response.
        #[arg(long, default_value_t = 60)]
        oracle_timeout: u64,
        /// Exit with code 1 when the verdict is false.
        #[arg(long)]
        exit_verdict: bool,
    },
    /// Check every case of a corpus directory, plus seeded random cases.
    Verify {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of random cases to add.
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        /// Cases whose Θ has more coordinates are reported as budget-exceeded.
        #[arg(long, default_value_t = ptoda::corpus::Limits::default().theta_coords)]
        theta_limit: usize,
    },
    /// Run every applicable oracle engine and certificate on one set.
    Crosscheck { path: PathBuf },
    /// Serve oracle requests, one JSON document per line.
    Oracle,
    /// Write the exhaustive corpus to a directory.
    Corpus { dir: PathBuf },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run(cli: Cli) -> Result<Option<Output>, Failure> {
    Ok(Some(match cli.command {
        Cmd::Validate { path } => commands::validate(&path)?,
        Cmd::Patterns { path } => commands::patterns(&path)?,
        Cmd::Poincare { path } => commands::poincare(&path)?,
        Cmd::Reduce { path } => commands::reduce(&path)?,
        Cmd::Decide { path, oracle, oracle_timeout, exit_verdict } => {
            let ext = commands::external(oracle.as_deref(), Duration::from_secs(oracle_timeout));
            commands::decide(&path, ext.as_ref(), exit_verdict)?
        }
        Cmd::Verify { dir, seed, count, jobs, theta_limit } => {
            commands::verify(&VerifyArgs { dir, seed, count, jobs, theta_limit })?
        }
        Cmd::Crosscheck { path } => commands::crosscheck(&path)?,
        Cmd::Oracle => {
            commands::oracle_filter()?;
            return Ok(None);
        }
        Cmd::Corpus { dir } => commands::generate_corpus(&dir)?,
    }))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(out)) => {
            let text = serde_json::to_string_pretty(&out.doc).expect("report serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::from(out.code as u8)
        }
        Err(f) => {
            let doc = serde_json::json!({"fmt": commands::REPORT_FMT, "error": f.message, "exit": f.code});
            let _ = writeln!(std::io::stdout(), "{doc}");
            eprintln!("ptoda: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
