use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sparsekit::profile::Profile;

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

/// JSON report of one run. Everything except `timings_ms` is a function of
/// the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub profile: Profile,
    pub result: Value,
    /// Named verification verdicts.
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
    pub fallbacks: usize,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            command: config.command,
            config: config.clone(),
            seed: config.seed,
            profile: config.profile,
            result: Value::Null,
            checks: BTreeMap::new(),
            pass: true,
            fallbacks: 0,
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
        self.pass = self.checks.values().all(|v| *v);
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings_ms.insert(phase.to_string(), t0.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))
    }

    /// The report with timings removed; byte-stable across replays.
    pub fn replay_json(&self) -> CliResult<String> {
        let mut v = serde_json::to_value(self).map_err(|e| CliError::Output(e.to_string()))?;
        if let Value::Object(map) = &mut v {
            map.remove("timings_ms");
        }
        serde_json::to_string_pretty(&v).map_err(|e| CliError::Output(e.to_string()))
    }

    pub fn from_json(s: &str) -> CliResult<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Output(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_ignores_timings() {
        let cfg = RunConfig::new(Command::Sparsify);
        let mut a = RunReport::new(&cfg);
        a.check("ok", true);
        let b = a.clone();
        a.timed("phase", || ());
        assert_ne!(a, b);
        assert_eq!(a.replay_json().unwrap(), b.replay_json().unwrap());
        assert_eq!(RunReport::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn pass_is_conjunction() {
        let mut r = RunReport::new(&RunConfig::new(Command::Ks));
        r.check("a", true);
        assert!(r.pass);
        r.check("b", false);
        assert!(!r.pass);
    }
}
