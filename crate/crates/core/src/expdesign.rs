//! Swap rounding for experimental design: turn a fractional design `pi` into
//! a set of `n` rows whose Gram matrix has a large smallest eigenvalue.

use serde::{Deserialize, Serialize};

use crate::aipe::{epsilon_for_window, AipeConfig, DistanceEstimator};
pub use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::linalg::{dot, whiten, SquareMatrix, VectorFamily, WeightedSelection};
use crate::minip::{poly_upper, MinIpConfig, RobustMinIpIndex};
use crate::profile::Profile;
use crate::rng;

/// `c` with `sum_i (c + alpha lambda_i(Z))^{-2} = 1` and `c > -alpha lambda_min(Z)`.
pub fn find_ct(z: &SquareMatrix, alpha: f64) -> Result<f64> {
    let eig = z.eigen()?;
    Ok(ct_from_values(&eig.values, alpha))
}

fn trace_at(values: &[f64], alpha: f64, c: f64) -> f64 {
    values.iter().map(|l| (c + alpha * l).powi(-2)).sum()
}

fn ct_from_values(values: &[f64], alpha: f64) -> f64 {
    let d = values.len() as f64;
    let floor = -alpha * values.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (floor, floor + d.sqrt());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if trace_at(values, alpha, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut c = 0.5 * (lo + hi);
    // Newton polish; f is convex and decreasing on the ray
    for _ in 0..3 {
        let f = trace_at(values, alpha, c) - 1.0;
        let df: f64 = values.iter().map(|l| -2.0 * (c + alpha * l).powi(-3)).sum();
        let next = c - f / df;
        if next > floor && next.is_finite() {
            c = next;
        }
    }
    c
}

/// `A = (c I + alpha Z)^{-2}` with unit trace, and `A^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub c: f64,
    pub a: SquareMatrix,
    pub a_half: SquareMatrix,
}

pub fn normalized_matrices(z: &SquareMatrix, alpha: f64) -> Result<Normalized> {
    let eig = z.eigen()?;
    let c = ct_from_values(&eig.values, alpha);
    let a_half = eig.map(|l| 1.0 / (c + alpha * l));
    let a = eig.map(|l| (c + alpha * l).powi(-2));
    Ok(Normalized { c, a, a_half })
}

/// Removal score `B^-`, undefined when its denominator is nonpositive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BMinus {
    Value(f64),
    Ineligible,
}

impl BMinus {
    pub fn value(self) -> Option<f64> {
        match self {
            BMinus::Value(v) => Some(v),
            BMinus::Ineligible => None,
        }
    }
}

/// `B^+(x) = <A, x x^T> / (beta + 2 alpha <A^{1/2}, x x^T>)` and
/// `B^-(x) = <A, x x^T> / (beta - 2 alpha <A^{1/2}, x x^T>)`.
pub fn b_scores(a: &SquareMatrix, a_half: &SquareMatrix, x: &[f64], alpha: f64, beta: f64) -> (f64, BMinus) {
    let p = dot(x, &a.matvec(x));
    let h = dot(x, &a_half.matvec(x));
    let plus = p / (beta + 2.0 * alpha * h);
    let den = beta - 2.0 * alpha * h;
    let minus = if den > 0.0 { BMinus::Value(p / den) } else { BMinus::Ineligible };
    (plus, minus)
}

/// `beta n/(1 - eps) A + 2 alpha A^{1/2}`: for eligible `x`,
/// `<q, x x^T> <= beta` iff `B^-(x) <= (1 - eps)/(beta n)`.
pub fn swap_query_matrix(a: &SquareMatrix, a_half: &SquareMatrix, n: usize, epsilon: f64, alpha: f64, beta: f64) -> SquareMatrix {
    a.scaled(beta * n as f64 / (1.0 - epsilon)).add(&a_half.scaled(2.0 * alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapConfig {
    pub n: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub backend: Backend,
    /// Min-IP approximation; `beta = 1/c`. Ignored (taken as 1) by the exact backend.
    pub c: f64,
    pub tau: f64,
    pub delta: f64,
    pub profile: Profile,
    pub seed: u64,
    /// Reject `n < 6 d / (eps^2 (gamma - 1 - beta))`.
    pub enforce_n_condition: bool,
}

impl SwapConfig {
    pub fn new(n: usize, epsilon: f64, gamma: f64) -> Self {
        Self {
            n,
            epsilon,
            gamma,
            backend: Backend::Exact,
            c: 1.0,
            tau: 0.5,
            delta: 0.1,
            profile: Profile::Full,
            seed: 0,
            enforce_n_condition: true,
        }
    }

    pub fn beta(&self) -> f64 {
        match self.backend {
            Backend::Exact => 1.0,
            Backend::Aipe | Backend::Afn => 1.0 / self.c,
        }
    }
}

/// Smallest `n` allowed for dimension `d`: `6 d / (eps^2 (gamma - 1 - beta))`.
pub fn n_lower_bound(d: usize, epsilon: f64, gamma: f64, beta: f64) -> Option<f64> {
    let slack = gamma - 1.0 - beta;
    (slack > 0.0).then(|| 6.0 * d as f64 / (epsilon * epsilon * slack))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapStep {
    pub removed: usize,
    pub added: usize,
    pub c_t: f64,
    pub trace: f64,
    /// `<q, x x^T>` of the removed row.
    pub removal_score: f64,
    pub b_minus: f64,
    pub b_plus: f64,
    /// Smallest removal score over eligible rows of the current set.
    pub best_removal_score: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapOutput {
    pub selection: WeightedSelection,
    pub set: Vec<usize>,
    pub lambda_min: f64,
    /// `lambda_min` of the current set before each iteration, then the final value.
    pub lambda_trace: Vec<f64>,
    pub steps: Vec<SwapStep>,
    pub budget: usize,
    pub alpha: f64,
    pub beta: f64,
    pub backend: Backend,
    pub fallbacks: usize,
    /// `B^-(x_i) <= (1 - eps)/(beta n)` and `B^+(x_j) >= 1/(beta n)` at every swap.
    pub witnesses_hold: bool,
    /// `beta sum_t (B^+ - B^-) - 2 eps + (1 - beta) <Z_0, U>` at the final minimum eigenvector `U`.
    pub regret_bound: f64,
    pub warnings: Vec<String>,
}

fn outer_flat(v: &[f64]) -> Vec<f64> {
    v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()
}

enum Engine {
    Exact,
    Aipe(Box<DistanceEstimator>),
    Afn(Box<RobustMinIpIndex>),
}

impl Engine {
    fn build(x: &VectorFamily, set: &[usize], cfg: &SwapConfig) -> Result<Self> {
        let d = x.dim();
        let radius = (0..x.len()).map(|i| dot(&x.dense(i), &x.dense(i))).fold(0.0, f64::max);
        match cfg.backend {
            Backend::Exact => Ok(Engine::Exact),
            Backend::Aipe => {
                let eps = epsilon_for_window(cfg.c, cfg.tau)?.min(0.25);
                let pts: Vec<(usize, Vec<f64>)> = set.iter().map(|&i| (i, outer_flat(&x.dense(i)))).collect();
                let acfg = AipeConfig {
                    profile: cfg.profile,
                    radius: Some(radius),
                    ..AipeConfig::new(eps, cfg.delta, cfg.seed)
                };
                Ok(Engine::Aipe(Box::new(DistanceEstimator::build(&pts, d * d, acfg)?)))
            }
            Backend::Afn => {
                let upper = poly_upper(cfg.tau, 0.0);
                if !(cfg.c > cfg.tau && cfg.c < upper) {
                    return Err(Error::Config(format!(
                        "tau < c < 400 tau/(399 + tau) = {upper} violated (c = {}, tau = {})",
                        cfg.c, cfg.tau
                    )));
                }
                let mcfg = MinIpConfig { delta: cfg.delta, profile: cfg.profile, seed: cfg.seed, ..MinIpConfig::new(cfg.c, cfg.tau) };
                // sized for the whole family, then trimmed to the current set
                let all: Vec<(usize, Vec<f64>)> = (0..x.len()).map(|i| (i, x.dense(i))).collect();
                let mut idx = RobustMinIpIndex::build_tensor(&all, d, Some(radius), mcfg)?;
                let inside: std::collections::BTreeSet<usize> = set.iter().copied().collect();
                for i in (0..x.len()).filter(|i| !inside.contains(i)) {
                    idx.delete(i)?;
                }
                Ok(Engine::Afn(Box::new(idx)))
            }
        }
    }

    fn query(&self, q: &SquareMatrix, tau: f64, rng: &mut impl rand::Rng) -> Result<Option<usize>> {
        let scaled: Vec<f64> = q.as_slice().iter().map(|v| tau * v).collect();
        match self {
            Engine::Exact => Ok(None),
            Engine::Aipe(est) => est.query_min(&scaled, rng).map(Some),
            Engine::Afn(idx) => Ok(idx.query_best(&scaled, rng)?.map(|a| a.id)),
        }
    }

    fn swap(&mut self, x: &VectorFamily, removed: usize, added: usize) -> Result<()> {
        match self {
            Engine::Exact => Ok(()),
            Engine::Aipe(est) => {
                est.delete(removed)?;
                est.insert(added, &outer_flat(&x.dense(added)))
            }
            Engine::Afn(idx) => {
                idx.delete(removed)?;
                idx.insert_tensor(added, x.dense(added))
            }
        }
    }
}

fn validate(x: &VectorFamily, pi: &[f64], cfg: &SwapConfig) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyInput("design matrix"));
    }
    if pi.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: pi.len() });
    }
    if pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Precondition("pi must lie in [0, 1]".into()));
    }
    let total: f64 = pi.iter().sum();
    if total > cfg.n as f64 + 1e-9 {
        return Err(Error::Precondition(format!("|pi|_1 = {total} exceeds n = {}", cfg.n)));
    }
    if cfg.n == 0 || cfg.n > x.len() {
        return Err(Error::Config(format!("1 <= n <= m violated (n = {}, m = {})", cfg.n, x.len())));
    }
    if !(cfg.gamma >= 3.0) {
        return Err(Error::Config(format!("gamma >= 3 violated (gamma = {})", cfg.gamma)));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0 / cfg.gamma + 1e-12) {
        return Err(Error::Config(format!("0 < epsilon <= 1/gamma violated (epsilon = {})", cfg.epsilon)));
    }
    if !matches!(cfg.backend, Backend::Exact) && !(cfg.c > 0.0 && cfg.c < 1.0) {
        return Err(Error::Config(format!("0 < c < 1 violated (c = {})", cfg.c)));
    }
    if cfg.enforce_n_condition {
        let beta = cfg.beta();
        match n_lower_bound(x.dim(), cfg.epsilon, cfg.gamma, beta) {
            Some(b) if cfg.n as f64 >= b => {}
            Some(b) => {
                return Err(Error::Precondition(format!("n >= 6d/(eps^2 (gamma - 1 - beta)) = {b} violated (n = {})", cfg.n)))
            }
            None => {
                return Err(Error::Precondition(format!(
                    "gamma - 1 - beta > 0 violated (gamma = {}, beta = {beta})",
                    cfg.gamma
                )))
            }
        }
    }
    Ok(())
}

fn set_gram(x: &VectorFamily, inside: &[bool]) -> SquareMatrix {
    let mut z = SquareMatrix::zeros(x.dim());
    for (i, &s) in inside.iter().enumerate() {
        if s {
            z.add_outer(&x.dense(i), 1.0);
        }
    }
    z
}

/// Eligible row of the set with the smallest `<q, x x^T>`, smallest index on ties.
fn best_removal(x: &VectorFamily, inside: &[bool], q: &SquareMatrix, norm: &Normalized, alpha: f64, beta: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in inside.iter().enumerate() {
        if !s {
            continue;
        }
        let v = x.dense(i);
        if b_scores(&norm.a, &norm.a_half, &v, alpha, beta).1 == BMinus::Ineligible {
            continue;
        }
        let score = dot(&v, &q.matvec(&v));
        if best.map_or(true, |(_, b)| score < b) {
            best = Some((i, score));
        }
    }
    best
}

/// Swap rounding on the whitened rows `X (X^T diag(pi) X)^{-1/2}`.
///
/// Starts from the `n` rows with the largest `pi` (smallest index on ties) and
/// swaps until `lambda_min > 1 - gamma eps` or `ceil(n/(c eps))` iterations pass.
pub fn swap_round(x: &VectorFamily, pi: &[f64], cfg: SwapConfig) -> Result<SwapOutput> {
    validate(x, pi, &cfg)?;
    let x = whiten(x, pi)?;
    let (m, d, n) = (x.len(), x.dim(), cfg.n);
    let beta = cfg.beta();
    let alpha = (d as f64).sqrt() * beta / cfg.epsilon;
    let budget = (n as f64 * beta / cfg.epsilon - 1e-9).ceil() as usize;
    let target = 1.0 - cfg.gamma * cfg.epsilon;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
    let mut inside = vec![false; m];
    for &i in &order[..n] {
        inside[i] = true;
    }
    let initial: Vec<usize> = (0..m).filter(|&i| inside[i]).collect();
    let mut engine = Engine::build(&x, &initial, &cfg)?;
    let mut rng = rng::stream(cfg.seed, 11);

    let z0 = set_gram(&x, &inside);
    let mut z = z0.clone();
    let mut lambda_trace = Vec::new();
    let mut steps = Vec::new();
    let mut fallbacks = 0;
    let mut warnings = Vec::new();
    let mut witnesses_hold = true;
    let mut regret_sum = 0.0;
    let mut t = 1;
    loop {
        let lambda = z.eigen()?.lambda_min();
        lambda_trace.push(lambda);
        if lambda > target {
            break;
        }
        if t > budget {
            return Err(Error::IterationExhausted { iterations: budget, lambda_min: lambda });
        }
        let norm = normalized_matrices(&z, alpha)?;
        let trace = norm.a.trace();
        if (trace - 1.0).abs() > 1e-8 {
            return Err(Error::NumericalWarning(format!("tr A_t = {trace} at iteration {t}")));
        }
        let q = swap_query_matrix(&norm.a, &norm.a_half, n, cfg.epsilon, alpha, beta);
        let (best_i, best_score) =
            best_removal(&x, &inside, &q, &norm, alpha, beta).ok_or(Error::NoEligibleRemoval { iteration: t })?;

        let answer = match engine.query(&q, cfg.tau, &mut rng) {
            Ok(a) => a,
            Err(e) => {
                warnings.push(format!("iteration {t}: backend query failed ({e})"));
                None
            }
        };
        let verified = answer.filter(|&i| inside[i]).and_then(|i| {
            let v = x.dense(i);
            let eligible = b_scores(&norm.a, &norm.a_half, &v, alpha, beta).1 != BMinus::Ineligible;
            let score = dot(&v, &q.matvec(&v));
            (eligible && score <= beta).then_some((i, score))
        });
        let mut fallback = false;
        let (i_t, removal_score) = match (cfg.backend, verified) {
            (Backend::Exact, _) => (best_i, best_score),
            (_, Some(hit)) => hit,
            (_, None) => {
                fallback = true;
                fallbacks += 1;
                (best_i, best_score)
            }
        };

        let mut j_t = None;
        let mut best_plus = f64::NEG_INFINITY;
        for (j, &s) in inside.iter().enumerate() {
            if s {
                continue;
            }
            let (plus, _) = b_scores(&norm.a, &norm.a_half, &x.dense(j), alpha, beta);
            if plus > best_plus {
                best_plus = plus;
                j_t = Some(j);
            }
        }
        let j_t = j_t.ok_or_else(|| Error::Precondition("no row outside the current set (n = m)".into()))?;
        let b_minus = b_scores(&norm.a, &norm.a_half, &x.dense(i_t), alpha, beta).1.value().expect("eligible removal");
        let bound = 1.0 / (beta * n as f64);
        if !(b_minus <= (1.0 - cfg.epsilon) * bound * (1.0 + 1e-9) && best_plus >= bound * (1.0 - 1e-9)) {
            witnesses_hold = false;
        }
        regret_sum += best_plus - b_minus;

        let (xi, xj) = (x.dense(i_t), x.dense(j_t));
        z.add_outer(&xj, 1.0);
        z.add_outer(&xi, -1.0);
        inside[i_t] = false;
        inside[j_t] = true;
        engine.swap(&x, i_t, j_t)?;
        steps.push(SwapStep {
            removed: i_t,
            added: j_t,
            c_t: norm.c,
            trace,
            removal_score,
            b_minus,
            b_plus: best_plus,
            best_removal_score: best_score,
            fallback,
        });
        t += 1;
    }
    let eig = z.eigen()?;
    let u = eig.min_vector();
    let regret_bound = beta * regret_sum - 2.0 * cfg.epsilon + (1.0 - beta) * dot(&u, &z0.matvec(&u));
    let set: Vec<usize> = (0..m).filter(|&i| inside[i]).collect();
    Ok(SwapOutput {
        selection: WeightedSelection::from_indices(&set),
        set,
        lambda_min: eig.lambda_min(),
        lambda_trace,
        steps,
        budget,
        alpha,
        beta,
        backend: cfg.backend,
        fallbacks,
        witnesses_hold,
        regret_bound,
        warnings,
    })
}
