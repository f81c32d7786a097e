//! Timing of the linear-scan and tree-accelerated sparsifiers on one seeded workload.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sparsekit::generators::random_isotropic;
use sparsekit::sparsifier::{bss_reference, iteration_count, sparsify_fast, CostModel, TreeKind};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::parse_matrix_file;

/// One CSV row per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub m: usize,
    pub d: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub iterations: usize,
    pub expected_iterations: usize,
    /// `scan`, `vector` or `matrix`.
    pub search: String,
    pub fallbacks: usize,
    pub wall_ms: f64,
    pub search_ms: f64,
    pub search_ms_per_iteration: f64,
}

/// Runs both variants on `--input`, or on `random_isotropic(m, d, seed)`.
pub fn run_bench(cfg: &RunConfig) -> CliResult<Vec<BenchRow>> {
    cfg.validate()?;
    let v = match &cfg.input {
        Some(p) => parse_matrix_file(p, cfg.format)?,
        None => random_isotropic(cfg.m, cfg.d, cfg.seed)?,
    };
    let eps = cfg.epsilon_or_default();
    let mut rows = Vec::new();
    for variant in ["reference", "fast"] {
        let t0 = Instant::now();
        let out = match variant {
            "reference" => bss_reference(&v, eps)?,
            _ => sparsify_fast(&v, eps, CostModel { omega: cfg.omega })?,
        };
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        let search_ms = out.search_nanos() as f64 * 1e-6;
        rows.push(BenchRow {
            variant: variant.to_string(),
            m: v.len(),
            d: v.dim(),
            epsilon: eps,
            seed: cfg.seed,
            iterations: out.iterations,
            expected_iterations: iteration_count(v.dim(), eps),
            search: match out.tree {
                None => "scan",
                Some(TreeKind::Vector) => "vector",
                Some(TreeKind::Matrix) => "matrix",
            }
            .to_string(),
            fallbacks: out.fallbacks,
            wall_ms,
            search_ms,
            search_ms_per_iteration: search_ms / out.iterations.max(1) as f64,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

pub fn parse_bench_csv(text: &str) -> CliResult<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                CliError::parse("bench csv", line, e.to_string())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn small_bench_round_trips() {
        let mut cfg = RunConfig::new(Command::Bench);
        cfg.m = 64;
        cfg.d = 4;
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.iterations, 16);
            assert_eq!(r.iterations, r.expected_iterations);
        }
        assert_eq!(rows[0].search, "scan");
        let csv = write_bench_csv(&rows).unwrap();
        assert!(csv.starts_with("variant,m,d,epsilon,seed,iterations"));
        assert_eq!(parse_bench_csv(&csv).unwrap(), rows);
    }

    #[test]
    fn malformed_csv_has_line() {
        let err = parse_bench_csv("variant,m\nfast,notanumber\n").unwrap_err();
        assert_eq!(err.exit_code(), 6);
    }
}
