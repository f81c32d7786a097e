use std::process::ExitCode;

use clap::Parser;
use sparsekit_cli::{emit, execute, RunConfig};

fn main() -> ExitCode {
    let cfg = RunConfig::parse();
    match execute(&cfg).and_then(|out| emit(&cfg, &out)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
