use serde_json::json;
use sparsekit::afn::{exact_furthest, exact_min_ip_oracle, AfnParams, AfnStructure};
use sparsekit::expdesign::{b_scores, normalized_matrices, swap_query_matrix, swap_round, BMinus, SwapConfig};
use sparsekit::ks::{ks_select, KsConfig};
use sparsekit::linalg::{dot, norm, whiten, SquareMatrix, VectorFamily};
use sparsekit::minip::{MinIpConfig, RobustMinIpIndex};
use sparsekit::rng;
use sparsekit::sketch::{default_hash_degree, default_sparsity, AnySketch, TensorSparseSketch, TensorSrhtSketch};
use sparsekit::sparsifier::{bss_reference, sparsify_fast, verify_sparsifier, BssOutput, CostModel};
use sparsekit::Error;

use crate::config::{Command, RunConfig, Suite, Variant};
use crate::error::CliResult;
use crate::io::{parse_matrix_file, parse_weights_file};
use crate::report::RunReport;

fn required_input(cfg: &RunConfig) -> CliResult<&std::path::Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--input is required for {}", cfg.command.name())).into())
}

fn design_weights(cfg: &RunConfig, m: usize, n: usize) -> CliResult<Vec<f64>> {
    match &cfg.pi {
        Some(p) => parse_weights_file(p, None),
        None => Ok(vec![n as f64 / m as f64; m]),
    }
}

/// Reads `--input`, whitening it when `--whiten` is set.
fn load_family(cfg: &RunConfig, report: &mut RunReport) -> CliResult<VectorFamily> {
    let path = required_input(cfg)?.to_path_buf();
    let v = report.timed("load", || parse_matrix_file(&path, cfg.format))?;
    if !cfg.whiten {
        return Ok(v);
    }
    let pi = match cfg.command {
        Command::Expdesign => design_weights(cfg, v.len(), cfg.n.unwrap_or(v.len()))?,
        _ => vec![1.0; v.len()],
    };
    Ok(report.timed("whiten", || whiten(&v, &pi))?)
}

fn bss_summary(v: &VectorFamily, out: &BssOutput, epsilon: f64, variant: &str) -> CliResult<serde_json::Value> {
    let rep = verify_sparsifier(v, &out.selection, epsilon)?;
    Ok(json!({
        "variant": variant,
        "iterations": out.iterations,
        "tree": out.tree,
        "fallbacks": out.fallbacks,
        "verdict": rep,
        "selection": out.selection.entries(),
        "upper_potentials": out.upper_potentials,
        "lower_potentials": out.lower_potentials,
    }))
}

/// Runs the requested sparsifier variants and checks each with `verify_sparsifier`.
pub fn run_sparsify(cfg: &RunConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new(cfg);
    let v = load_family(cfg, &mut report)?;
    let eps = cfg.epsilon_or_default();
    let mut results = Vec::new();
    let variants: &[&str] = match cfg.variant {
        Variant::Reference => &["reference"],
        Variant::Fast => &["fast"],
        Variant::Both => &["reference", "fast"],
    };
    for &name in variants {
        let out = report.timed(name, || match name {
            "reference" => bss_reference(&v, eps),
            _ => sparsify_fast(&v, eps, CostModel { omega: cfg.omega }),
        })?;
        report.timings_ms.insert(format!("{name}_search"), out.search_nanos() as f64 * 1e-6);
        let summary = bss_summary(&v, &out, eps, name)?;
        report.check(name, summary["verdict"]["pass"].as_bool().unwrap_or(false));
        report.fallbacks += out.fallbacks;
        report.warnings.extend(out.warnings.iter().cloned());
        results.push(summary);
    }
    report.result = json!({ "m": v.len(), "d": v.dim(), "epsilon": eps, "variants": results });
    Ok(report)
}

/// Kadison-Singer selection; the verdict compares the final norm with `beta a_n`.
pub fn run_ks(cfg: &RunConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new(cfg);
    let v = load_family(cfg, &mut report)?;
    let n = cfg.n.ok_or_else(|| Error::Config("--n is required for ks".into()))?;
    let big_n = match cfg.big_n {
        Some(b) => b,
        None if v.dim() > 0 && v.len() % v.dim() == 0 => v.len() / v.dim(),
        None => return Err(Error::Config("--N is required when m is not a multiple of d".into()).into()),
    };
    let mut kc = KsConfig::with_backend(cfg.backend, cfg.c_or_default(), cfg.tau_or_default(), cfg.seed);
    kc.delta = cfg.delta;
    kc.profile = cfg.profile;
    let out = report.timed("select", || ks_select(&v, big_n, n, kc))?;
    let a_n = *out.barriers.last().unwrap_or(&f64::NAN);
    let nonincreasing = out.potentials.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    report.check("norm_within_bound", out.final_norm <= out.bound);
    report.check("potentials_nonincreasing", nonincreasing);
    report.fallbacks = out.fallbacks;
    report.warnings = out.warnings.clone();
    report.result = json!({
        "m": v.len(),
        "d": v.dim(),
        "N": big_n,
        "n": n,
        "backend": out.backend,
        "order": out.order,
        "scores": out.scores,
        "barriers": out.barriers,
        "potentials": out.potentials,
        "final_norm": out.final_norm,
        "a_n": a_n,
        "beta": out.beta,
        "bound": out.bound,
    });
    Ok(report)
}

/// Swap rounding; the verdict compares `lambda_min` with `1 - gamma eps`.
pub fn run_expdesign(cfg: &RunConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new(cfg);
    let x = load_family(cfg, &mut report)?;
    let n = cfg.n.ok_or_else(|| Error::Config("--n is required for expdesign".into()))?;
    let pi = design_weights(cfg, x.len(), n)?;
    let eps = cfg.epsilon_or_default();
    let mut sc = SwapConfig::new(n, eps, cfg.gamma);
    sc.backend = cfg.backend;
    sc.c = cfg.c_or_default();
    sc.tau = cfg.tau_or_default();
    sc.delta = cfg.delta;
    sc.profile = cfg.profile;
    sc.seed = cfg.seed;
    let out = report.timed("swap", || swap_round(&x, &pi, sc))?;
    let target = 1.0 - cfg.gamma * eps;
    let traces_ok = out.steps.iter().all(|s| (s.trace - 1.0).abs() <= 1e-8);
    report.check("lambda_min_reaches_target", out.lambda_min >= target);
    report.check("witnesses_hold", out.witnesses_hold);
    report.check("unit_trace", traces_ok);
    report.check("regret_bound", out.lambda_min >= out.regret_bound - 1e-9);
    report.fallbacks = out.fallbacks;
    report.warnings = out.warnings.clone();
    report.result = json!({
        "m": x.len(),
        "d": x.dim(),
        "n": n,
        "epsilon": eps,
        "gamma": cfg.gamma,
        "target": target,
        "backend": out.backend,
        "set": out.set,
        "lambda_min": out.lambda_min,
        "lambda_trace": out.lambda_trace,
        "swaps": out.steps.len(),
        "budget": out.budget,
        "alpha": out.alpha,
        "beta": out.beta,
        "regret_bound": out.regret_bound,
        "steps": out.steps,
    });
    Ok(report)
}

fn dataset(input: Option<&VectorFamily>, n: usize, dim: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    match input {
        Some(v) => v.dense_rows(),
        None => {
            let mut r = rng::stream(seed, stream);
            (0..n).map(|_| rng::unit_vector(&mut r, dim)).collect()
        }
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let s = norm(&v);
    if s > 0.0 {
        v.into_iter().map(|x| x / s).collect()
    } else {
        v
    }
}

/// Robust Min-IP on an adaptive query chain, checked against the linear scan.
fn oracle_minip(cfg: &RunConfig, input: Option<&VectorFamily>, report: &mut RunReport) -> CliResult<serde_json::Value> {
    let points = dataset(input, 500, 8, cfg.seed, 21);
    let dim = points[0].len();
    let ids: Vec<(usize, Vec<f64>)> = points.iter().cloned().enumerate().collect();
    let mc = MinIpConfig {
        lambda: cfg.lambda,
        delta: cfg.delta,
        epsilon: cfg.epsilon_or_default(),
        profile: cfg.profile,
        seed: cfg.seed,
        ..MinIpConfig::new(cfg.c_or_default(), cfg.tau_or_default())
    };
    let idx = report.timed("minip_build", || RobustMinIpIndex::build_flat(&ids, dim, None, mc))?;
    let (dx, threshold) = (idx.descriptor().dx, idx.threshold());
    let tau = cfg.tau_or_default();
    let mut r = rng::stream(cfg.seed, 22);
    let mut q = rng::unit_vector(&mut r, dim);
    let (mut successes, mut agree, mut promised, mut promised_failures) = (0usize, 0usize, 0usize, 0usize);
    let t0 = std::time::Instant::now();
    for _ in 0..100 {
        let (_, exact) = exact_min_ip_oracle(&points, &q)?;
        let is_promised = exact / (dx * norm(&q)) <= tau;
        promised += is_promised as usize;
        let noise = rng::gaussian_vector(&mut r, dim);
        match idx.query(&q, &mut r)? {
            Some(a) => {
                successes += 1;
                let consistent = (dot(&points[a.id], &q) - a.inner_product).abs() <= 1e-12;
                if consistent && a.normalized <= threshold + 1e-12 && a.inner_product >= exact - 1e-12 {
                    agree += 1;
                }
                // the next query depends on the answer
                let z = &points[a.id];
                q = unit(q.iter().zip(z).zip(&noise).map(|((a, b), g)| a - b + 0.5 * g).collect());
            }
            None => {
                promised_failures += is_promised as usize;
                q = unit(noise);
            }
        }
    }
    report.timings_ms.insert("minip_queries".into(), t0.elapsed().as_secs_f64() * 1e3);
    let failure_rate = if promised > 0 { promised_failures as f64 / promised as f64 } else { 0.0 };
    report.check("minip_agreement", agree == successes);
    report.check("minip_failure_rate", failure_rate <= cfg.delta);
    Ok(json!({
        "points": points.len(),
        "queries": 100,
        "threshold": threshold,
        "successes": successes,
        "agreements": agree,
        "agreement_rate": if successes > 0 { agree as f64 / successes as f64 } else { 1.0 },
        "promised": promised,
        "promised_failures": promised_failures,
        "failure_rate": failure_rate,
    }))
}

fn matvec_rows(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| dot(r, x)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Both tensor sketches at `d = 8` against their materialized matrices.
fn oracle_sketch(cfg: &RunConfig, report: &mut RunReport) -> CliResult<serde_json::Value> {
    let (d, b) = (8usize, 32usize);
    let (s, b_sparse) = default_sparsity(cfg.epsilon_or_default(), b);
    let sketches = [
        ("srht", AnySketch::Srht(TensorSrhtSketch::new(d, b, cfg.seed)?)),
        (
            "sparse",
            AnySketch::Sparse(TensorSparseSketch::new(d, b_sparse, s, default_hash_degree(cfg.delta), cfg.seed)?),
        ),
    ];
    let mut r = rng::stream(cfg.seed, 23);
    let mut out = serde_json::Map::new();
    for (name, sk) in &sketches {
        let m = sk.materialize();
        let mut err = 0.0f64;
        for _ in 0..20 {
            let u = rng::gaussian_vector(&mut r, d);
            let v = rng::gaussian_vector(&mut r, d);
            let flat: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
            err = err.max(max_diff(&sk.apply_pair(&u, &v)?, &matvec_rows(&m, &flat)));
            let x = rng::gaussian_vector(&mut r, d * d);
            err = err.max(max_diff(&sk.apply_flat(&x)?, &matvec_rows(&m, &x)));
        }
        let frob = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        report.check(&format!("sketch_{name}_materialization"), err <= 1e-9);
        out.insert(
            name.to_string(),
            json!({ "d": d, "target_dim": sk.target_dim(), "max_error": err, "frobenius": frob }),
        );
    }
    Ok(serde_json::Value::Object(out))
}

/// Amplified furthest neighbor against the exact furthest point.
fn oracle_afn(cfg: &RunConfig, input: Option<&VectorFamily>, report: &mut RunReport) -> CliResult<serde_json::Value> {
    let points: Vec<Vec<f64>> = dataset(input, 200, 8, cfg.seed, 24).into_iter().map(unit).collect();
    let dim = points[0].len();
    let cbar = 2.0;
    let consts = cfg.profile.constants();
    let params = AfnParams { c1: consts.directions, cs: consts.copies, delta: cfg.delta };
    let ids: Vec<(usize, Vec<f64>)> = points.iter().cloned().enumerate().collect();
    let afn = report.timed("afn_build", || AfnStructure::build(&ids, dim, cbar, params, None, cfg.seed))?;
    let mut r = rng::stream(cfg.seed, 25);
    let (mut answered, mut within) = (0usize, 0usize);
    let queries = 50;
    for _ in 0..queries {
        let q = rng::unit_vector(&mut r, dim);
        let (_, exact) = exact_furthest(&points, &q).ok_or(Error::EmptyInput("dataset"))?;
        if let Some(a) = afn.query(&q)? {
            answered += 1;
            within += (a.distance * (cbar + cfg.delta) >= exact - 1e-12) as usize;
        }
    }
    let success = answered as f64 / queries as f64;
    report.check("afn_within_factor", within == answered);
    report.check("afn_success_rate", success >= 0.9);
    Ok(json!({
        "points": points.len(),
        "cbar": cbar,
        "queries": queries,
        "answered": answered,
        "within_factor": within,
        "success_rate": success,
    }))
}

/// Threshold test on the swap query matrix against direct B-scores.
fn oracle_bscores(cfg: &RunConfig, report: &mut RunReport) -> CliResult<serde_json::Value> {
    let mut r = rng::stream(cfg.seed, 26);
    let (mut eligible, mut agree, mut trace_err) = (0usize, 0usize, 0.0f64);
    let cases = 200;
    for s in 0..cases {
        let d = 2 + s % 4;
        let alpha = 0.2 + (s % 5) as f64 * 0.3;
        let beta = 1.0 + (s % 3) as f64 * 0.2;
        let n = 5 + s % 40;
        let eps = 0.05 + (s % 6) as f64 * 0.05;
        let mut z = SquareMatrix::zeros(d);
        for _ in 0..d + 2 {
            z.add_outer(&rng::gaussian_vector(&mut r, d), 1.0);
        }
        let nm = normalized_matrices(&z, alpha)?;
        trace_err = trace_err.max((nm.a.trace() - 1.0).abs());
        let q = swap_query_matrix(&nm.a, &nm.a_half, n, eps, alpha, beta);
        let x: Vec<f64> = rng::gaussian_vector(&mut r, d).into_iter().map(|v| v * 0.3).collect();
        if let (_, BMinus::Value(bm)) = b_scores(&nm.a, &nm.a_half, &x, alpha, beta) {
            eligible += 1;
            let lhs = dot(&x, &q.matvec(&x)) <= beta;
            let rhs = bm <= (1.0 - eps) / (beta * n as f64);
            agree += (lhs == rhs) as usize;
        }
    }
    report.check("bscores_agreement", agree == eligible);
    report.check("bscores_unit_trace", trace_err <= 1e-8);
    Ok(json!({ "cases": cases, "eligible": eligible, "agreements": agree, "max_trace_error": trace_err }))
}

/// Runs the selected oracle suites; an empty input file yields a clean
/// "nothing to check" report.
pub fn run_oracle(cfg: &RunConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new(cfg);
    let input = match &cfg.input {
        Some(p) => Some(report.timed("load", || parse_matrix_file(p, cfg.format))?),
        None => None,
    };
    if input.as_ref().is_some_and(|v| v.is_empty()) {
        report.result = json!({ "status": "nothing to check" });
        return Ok(report);
    }
    let input = input.as_ref();
    let all = cfg.suite == Suite::All;
    let mut out = serde_json::Map::new();
    if all || cfg.suite == Suite::Minip {
        out.insert("minip".into(), oracle_minip(cfg, input, &mut report)?);
    }
    if all || cfg.suite == Suite::Sketch {
        out.insert("sketch".into(), oracle_sketch(cfg, &mut report)?);
    }
    if all || cfg.suite == Suite::Afn {
        out.insert("afn".into(), oracle_afn(cfg, input, &mut report)?);
    }
    if all || cfg.suite == Suite::Bscores {
        out.insert("bscores".into(), oracle_bscores(cfg, &mut report)?);
    }
    report.result = serde_json::Value::Object(out);
    Ok(report)
}

