//! Command-line front end: file readers, command dispatch and JSON reports.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use bench::{parse_bench_csv, run_bench, write_bench_csv, BenchRow};
pub use commands::{run_expdesign, run_ks, run_oracle, run_sparsify};
pub use config::{Command, RunConfig, Suite, Variant};
pub use error::{CliError, CliResult};
pub use io::{parse_csv, parse_matrix_file, parse_matrix_market, write_csv, write_matrix_market, Format};
pub use report::RunReport;

/// Output of one command: a JSON report, or a CSV table for `bench`.
#[derive(Debug, Clone)]
pub enum Outcome {
    Report(RunReport),
    Table(Vec<BenchRow>),
}

pub fn execute(cfg: &RunConfig) -> CliResult<Outcome> {
    Ok(match cfg.command {
        Command::Sparsify => Outcome::Report(run_sparsify(cfg)?),
        Command::Ks => Outcome::Report(run_ks(cfg)?),
        Command::Expdesign => Outcome::Report(run_expdesign(cfg)?),
        Command::Oracle => Outcome::Report(run_oracle(cfg)?),
        Command::Bench => Outcome::Table(run_bench(cfg)?),
    })
}

/// Writes the outcome to `--output` or stdout and returns the exit code:
/// 0 on pass, 1 on a failed verdict, 4 for warnings under `--strict`.
pub fn emit(cfg: &RunConfig, outcome: &Outcome) -> CliResult<u8> {
    let (text, code) = match outcome {
        Outcome::Report(r) => {
            let code = if !r.pass {
                1
            } else if cfg.strict && !r.warnings.is_empty() {
                CliError::Strict(r.warnings.join("; ")).exit_code()
            } else {
                0
            };
            (r.to_json()? + "\n", code)
        }
        Outcome::Table(rows) => (write_bench_csv(rows)?, 0),
    };
    match &cfg.output {
        Some(p) => io::write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(code)
}
