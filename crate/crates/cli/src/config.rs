use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sparsekit::backend::Backend;
use sparsekit::profile::Profile;
use sparsekit::Error;

use crate::error::CliResult;
use crate::io::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Spectral sparsification of an isotropic family.
    Sparsify,
    /// Kadison-Singer style selection of n vectors.
    Ks,
    /// Swap rounding for experimental design.
    Expdesign,
    /// Timing of the linear-scan and tree-accelerated sparsifiers (CSV output).
    Bench,
    /// Data-structure oracle suites.
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sparsify => "sparsify",
            Command::Ks => "ks",
            Command::Expdesign => "expdesign",
            Command::Bench => "bench",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reference,
    Fast,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Minip,
    Sketch,
    Afn,
    Bscores,
    All,
}

/// Everything a run depends on. Replaying the same config gives the same report
/// apart from timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Parser)]
#[command(name = "sparsekit", version, about = "Spectral sparsification, Kadison-Singer selection and experimental design")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Matrix file; one vector per row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    /// Number of vectors to select.
    #[arg(long)]
    pub n: Option<usize>,
    /// Inverse squared norm of the input vectors (ks); inferred as m/d when omitted.
    #[arg(long = "N", id = "big_n")]
    pub big_n: Option<usize>,
    #[arg(long, env = "SPARSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "full")]
    pub profile: Profile,
    /// Matrix-multiplication exponent of the tree cost model.
    #[arg(long, default_value_t = 3.0)]
    pub omega: f64,
    #[arg(long, default_value = "exact")]
    pub backend: Backend,
    /// Whiten the input first (uniform weights, or --pi for expdesign).
    #[arg(long)]
    pub whiten: bool,
    /// Fractional design weights for expdesign; defaults to n/m each.
    #[arg(long)]
    pub pi: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::Both)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Bench family size when no input is given.
    #[arg(long, default_value_t = 4096)]
    pub m: usize,
    /// Bench dimension when no input is given.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Exit with the numerical-warning code when the run reports warnings.
    #[arg(long)]
    pub strict: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn config_err(msg: String) -> crate::error::CliError {
    Error::Config(msg).into()
}

impl RunConfig {
    /// Defaults for `command` without reading the environment.
    pub fn new(command: Command) -> Self {
        Self {
            command,
            input: None,
            format: None,
            epsilon: None,
            c: None,
            tau: None,
            lambda: 0.01,
            delta: 0.1,
            gamma: 3.0,
            n: None,
            big_n: None,
            seed: 0,
            profile: Profile::Full,
            omega: 3.0,
            backend: Backend::Exact,
            whiten: false,
            pi: None,
            variant: Variant::Both,
            suite: Suite::All,
            m: 4096,
            d: 16,
            strict: false,
            output: None,
        }
    }

    pub fn epsilon_or_default(&self) -> f64 {
        self.epsilon.unwrap_or(match self.command {
            Command::Sparsify | Command::Bench => 0.5,
            Command::Ks => 0.1,
            Command::Expdesign => 1.0 / 3.0,
            Command::Oracle => 0.1,
        })
    }

    pub fn tau_or_default(&self) -> f64 {
        self.tau.unwrap_or(0.5)
    }

    /// `c` for the randomized backends; 1 for exact unless given.
    pub fn c_or_default(&self) -> f64 {
        match (self.c, self.command, self.backend) {
            (Some(c), _, _) => c,
            (None, Command::Oracle, _) => 0.52,
            (None, _, Backend::Exact) => 1.0,
            (None, _, _) => 0.9,
        }
    }

    /// Checks every parameter window before dispatch.
    pub fn validate(&self) -> CliResult<()> {
        let eps = self.epsilon_or_default();
        if !(eps > 0.0 && eps < 1.0) {
            return Err(config_err(format!("0 < epsilon < 1 violated (epsilon = {eps})")));
        }
        let tau = self.tau_or_default();
        if !(tau > 0.0 && tau < 1.0) {
            return Err(config_err(format!("0 < tau < 1 violated (tau = {tau})")));
        }
        let c = self.c_or_default();
        let uses_window = self.c.is_some() || self.backend != Backend::Exact || self.command == Command::Oracle;
        if uses_window && !(c > tau && c <= 1.0) {
            return Err(config_err(format!("tau < c <= 1 violated (c = {c}, tau = {tau})")));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(config_err(format!("lambda > 0 violated (lambda = {})", self.lambda)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err(format!("0 < delta < 1 violated (delta = {})", self.delta)));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(config_err(format!("gamma > 1 violated (gamma = {})", self.gamma)));
        }
        if !(2.0..=3.0).contains(&self.omega) {
            return Err(config_err(format!("2 <= omega <= 3 violated (omega = {})", self.omega)));
        }
        if self.n == Some(0) {
            return Err(config_err("n >= 1 violated (n = 0)".into()));
        }
        if let Some(big_n) = self.big_n {
            if big_n < 2 {
                return Err(config_err(format!("N >= 2 violated (N = {big_n})")));
            }
        }
        if self.command == Command::Bench && !(self.m >= self.d && self.d >= 1) {
            return Err(config_err(format!("m >= d >= 1 violated (m = {}, d = {})", self.m, self.d)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cfg = RunConfig::try_parse_from([
            "sparsekit", "ks", "--input", "f.mtx", "--N", "25", "--n", "10", "--backend", "aipe", "--c", "0.9",
            "--tau", "0.5", "--profile", "desk", "--seed", "4",
        ])
        .unwrap();
        assert_eq!(cfg.command, Command::Ks);
        assert_eq!(cfg.big_n, Some(25));
        assert_eq!(cfg.n, Some(10));
        assert_eq!(cfg.backend, Backend::Aipe);
        assert_eq!(cfg.profile, Profile::Desk);
        assert_eq!(cfg.seed, 4);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn windows_are_named() {
        let mut cfg = RunConfig::new(Command::Ks);
        cfg.c = Some(0.5);
        cfg.tau = Some(0.5);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tau < c <= 1"), "{msg}");
        let mut cfg = RunConfig::new(Command::Sparsify);
        cfg.epsilon = Some(1.5);
        assert!(cfg.validate().unwrap_err().to_string().contains("0 < epsilon < 1"));
        let mut cfg = RunConfig::new(Command::Sparsify);
        cfg.omega = 1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_backend_rejected() {
        assert!(RunConfig::try_parse_from(["sparsekit", "ks", "--backend", "gpu"]).is_err());
    }
}
