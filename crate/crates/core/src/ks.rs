//! One-sided Kadison-Singer selection: pick `n` of `m` isotropic vectors of
//! norm `1/sqrt(N)` so that the selected sum has small spectral norm.

use serde::{Deserialize, Serialize};

use crate::aipe::{epsilon_for_window, AipeConfig, DistanceEstimator};
pub use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::linalg::{
    check_isotropy, dot, isotropy_deviation, norm, upper_potential, SquareMatrix, VectorFamily, WeightedSelection,
};
use crate::minip::{poly_upper, MinIpConfig, RobustMinIpIndex};
use crate::profile::Profile;
use crate::rng;

/// `a_i = 1/sqrt(N) + (1 + 1/(sqrt(N) - 1)) i/m` for `i = 0..=n`.
pub fn ks_barrier_sequence(big_n: usize, m: usize, n: usize) -> Result<Vec<f64>> {
    if big_n < 2 {
        return Err(Error::Config(format!("N >= 2 violated (N = {big_n})")));
    }
    if n >= m {
        return Err(Error::Config(format!("n < m violated (n = {n}, m = {m})")));
    }
    let s = (big_n as f64).sqrt();
    let slope = 1.0 + 1.0 / (s - 1.0);
    Ok((0..=n).map(|i| 1.0 / s + slope * i as f64 / m as f64).collect())
}

/// `(tr N - tr M)^{-1} M M + M` with `M = (a I - T)^{-1}`, `N = (a_prev I - T)^{-1}`.
pub fn ks_query_matrix(t: &SquareMatrix, a_prev: f64, a: f64) -> Result<SquareMatrix> {
    let eig = t.eigen()?;
    query_from_eig(&eig.values, &eig, a_prev, a)
}

fn query_from_eig(values: &[f64], eig: &crate::linalg::EigenDecomposition, a_prev: f64, a: f64) -> Result<SquareMatrix> {
    let top = eig.lambda_max();
    if !(a_prev > top) || !(a > a_prev) {
        return Err(Error::BarrierViolation { barrier: a_prev.min(a), eigenvalue: top });
    }
    let gap = upper_potential(values, a_prev) - upper_potential(values, a);
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::NonFinite("barrier potential difference"));
    }
    Ok(eig.map(|x| {
        let m = 1.0 / (a - x);
        m * m / gap + m
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub backend: Backend,
    pub c: f64,
    pub tau: f64,
    pub delta: f64,
    pub profile: Profile,
    pub seed: u64,
}

impl KsConfig {
    pub fn exact() -> Self {
        Self { backend: Backend::Exact, c: 1.0, tau: 0.5, delta: 0.1, profile: Profile::Full, seed: 0 }
    }

    pub fn with_backend(backend: Backend, c: f64, tau: f64, seed: u64) -> Self {
        Self { backend, c, tau, seed, ..Self::exact() }
    }

    /// Scale of the accumulator: 1, `1/c` or `2/c`.
    pub fn beta(&self) -> f64 {
        match self.backend {
            Backend::Exact => 1.0,
            Backend::Aipe => 1.0 / self.c,
            Backend::Afn => 2.0 / self.c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsOutput {
    pub selection: WeightedSelection,
    /// Selected indices in the order chosen.
    pub order: Vec<usize>,
    /// Score `<q_j, v v^T>` of each chosen vector.
    pub scores: Vec<f64>,
    /// `a_0..a_n`.
    pub barriers: Vec<f64>,
    /// `Phi^{a_j}(T_j)` for `j = 0..=n`.
    pub potentials: Vec<f64>,
    pub final_norm: f64,
    pub beta: f64,
    /// `beta a_n`.
    pub bound: f64,
    pub backend: Backend,
    pub fallbacks: usize,
    pub warnings: Vec<String>,
}

fn validate(v: &VectorFamily, big_n: usize, n: usize) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyInput("vector family"));
    }
    if big_n < 2 {
        return Err(Error::Config(format!("N >= 2 violated (N = {big_n})")));
    }
    let (m, d) = (v.len(), v.dim());
    if m != d * big_n {
        return Err(Error::Precondition(format!("m = d N violated (m = {m}, d = {d}, N = {big_n})")));
    }
    if n >= m {
        return Err(Error::Config(format!("n < m violated (n = {n}, m = {m})")));
    }
    let target = 1.0 / (big_n as f64).sqrt();
    for i in 0..m {
        let r = norm(&v.dense(i));
        if (r - target).abs() > 1e-9 {
            return Err(Error::Precondition(format!("|v_{i}| = {r} but 1/sqrt(N) = {target}")));
        }
    }
    if !check_isotropy(v, 1e-6) {
        return Err(Error::IsotropyViolation { deviation: isotropy_deviation(v) });
    }
    Ok(())
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
    fn build(v: &VectorFamily, big_n: usize, cfg: &KsConfig) -> Result<Self> {
        let d = v.dim();
        match cfg.backend {
            Backend::Exact => Ok(Engine::Exact),
            Backend::Aipe => {
                let eps = epsilon_for_window(cfg.c, cfg.tau)?.min(0.25);
                let pts: Vec<(usize, Vec<f64>)> = (0..v.len()).map(|i| (i, outer_flat(&v.dense(i)))).collect();
                let acfg = AipeConfig {
                    profile: cfg.profile,
                    radius: Some(1.0 / big_n as f64),
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
                let vs: Vec<(usize, Vec<f64>)> = (0..v.len()).map(|i| (i, v.dense(i))).collect();
                Ok(Engine::Afn(Box::new(RobustMinIpIndex::build_tensor(&vs, d, Some(1.0 / big_n as f64), mcfg)?)))
            }
        }
    }

    /// Candidate for `argmin <q, v v^T>` among the remaining indices.
    fn query(&self, q: &SquareMatrix, tau: f64, rng: &mut impl rand::Rng) -> Result<Option<usize>> {
        let scaled: Vec<f64> = q.as_slice().iter().map(|x| tau * x).collect();
        match self {
            Engine::Exact => Ok(None),
            Engine::Aipe(est) => est.query_min(&scaled, rng).map(Some),
            Engine::Afn(idx) => Ok(idx.query_best(&scaled, rng)?.map(|a| a.id)),
        }
    }

    fn delete(&mut self, i: usize) -> Result<()> {
        match self {
            Engine::Exact => Ok(()),
            Engine::Aipe(est) => est.delete(i),
            Engine::Afn(idx) => idx.delete(i),
        }
    }
}

/// Smallest score among unselected indices, smallest index on ties.
fn scan(v: &VectorFamily, q: &SquareMatrix, selected: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if selected[i] {
            continue;
        }
        let s = x.quad(q);
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best
}

/// Greedy selection with the accumulator `T = (1/beta) sum_{i in S} v_i v_i^T`.
pub fn ks_select(v: &VectorFamily, big_n: usize, n: usize, cfg: KsConfig) -> Result<KsOutput> {
    validate(v, big_n, n)?;
    let beta = cfg.beta();
    let barriers = ks_barrier_sequence(big_n, v.len(), n)?;
    let mut engine = Engine::build(v, big_n, &cfg)?;
    let mut rng = rng::stream(cfg.seed, 7);
    let d = v.dim();
    let mut t = SquareMatrix::zeros(d);
    let mut sum = SquareMatrix::zeros(d);
    let mut selected = vec![false; v.len()];
    let mut order = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut potentials = Vec::with_capacity(n + 1);
    let mut fallbacks = 0;
    let mut warnings = Vec::new();
    potentials.push(upper_potential(&t.eigen()?.values, barriers[0]));
    for j in 1..=n {
        let eig = t.eigen()?;
        let q = query_from_eig(&eig.values, &eig, barriers[j - 1], barriers[j])?;
        let answer = match engine.query(&q, cfg.tau, &mut rng) {
            Ok(a) => a,
            Err(e) => {
                warnings.push(format!("step {j}: backend query failed ({e})"));
                None
            }
        };
        let accepted = answer.filter(|&i| !selected[i]).map(|i| (i, v.get(i).quad(&q))).filter(|&(_, s)| s <= beta);
        let (i, score) = match accepted {
            Some(hit) => hit,
            None => {
                if !matches!(cfg.backend, Backend::Exact) {
                    fallbacks += 1;
                }
                let (i, s) = scan(v, &q, &selected).ok_or(Error::EmptyInput("unselected vectors"))?;
                if s > beta {
                    return Err(Error::BarrierCollapse { step: j, score: s, limit: beta });
                }
                (i, s)
            }
        };
        let x = v.dense(i);
        t.add_outer(&x, 1.0 / beta);
        sum.add_outer(&x, 1.0);
        selected[i] = true;
        engine.delete(i)?;
        order.push(i);
        scores.push(score);
        let eig = t.eigen()?;
        if eig.lambda_max() >= barriers[j] {
            return Err(Error::BarrierViolation { barrier: barriers[j], eigenvalue: eig.lambda_max() });
        }
        potentials.push(upper_potential(&eig.values, barriers[j]));
    }
    let final_norm = sum.eigen()?.lambda_max();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    Ok(KsOutput {
        selection: WeightedSelection::from_indices(&sorted),
        order,
        scores,
        potentials,
        final_norm,
        beta,
        bound: beta * barriers[n],
        barriers,
        backend: cfg.backend,
        fallbacks,
        warnings,
    })
}

/// Exact greedy: minimum score by linear scan each step.
pub fn ks_greedy_exact(v: &VectorFamily, big_n: usize, n: usize) -> Result<KsOutput> {
    ks_select(v, big_n, n, KsConfig::exact())
}

/// `<q, v v^T>` evaluated directly from the barrier definition.
pub fn greedy_score(t: &SquareMatrix, v: &[f64], a_prev: f64, a: f64) -> Result<f64> {
    let eig = t.eigen()?;
    let m = eig.map(|x| 1.0 / (a - x));
    let mv = m.matvec(v);
    let gap = upper_potential(&eig.values, a_prev) - upper_potential(&eig.values, a);
    Ok(dot(&mv, &mv) / gap + dot(v, &mv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{harmonic_frame, random_orthogonal};

    #[test]
    fn barrier_examples() {
        let a = ks_barrier_sequence(4, 8, 7).unwrap();
        assert_eq!(a[0], 0.5);
        // i = m evaluated directly
        assert_eq!(0.5 + 2.0 * 8.0 / 8.0, 2.5);
        assert!((a[4] - 1.5).abs() < 1e-15);
        let a = ks_barrier_sequence(9, 27, 5).unwrap();
        for (i, &x) in a.iter().enumerate() {
            assert!((x - (1.0 / 3.0 + 1.5 * i as f64 / 27.0)).abs() < 1e-12);
        }
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert!(ks_barrier_sequence(1, 8, 2).is_err());
        assert!(ks_barrier_sequence(4, 8, 8).is_err());
    }

    #[test]
    fn query_matrix_scalar() {
        let q = ks_query_matrix(&SquareMatrix::zeros(1), 1.0, 2.0).unwrap();
        assert!((q.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(ks_query_matrix(&SquareMatrix::from_diag(&[1.5]), 1.0, 2.0).is_err());
    }

    #[test]
    fn query_matrix_matches_score_formula() {
        let mut r = rng::stream(3, 0);
        for _ in 0..100 {
            let d = 4;
            let mut t = SquareMatrix::zeros(d);
            for _ in 0..3 {
                t.add_outer(&rng::gaussian_vector(&mut r, d), 0.1);
            }
            let top = t.eigen().unwrap().lambda_max();
            let (a0, a1) = (top + 0.3, top + 0.5);
            let q = ks_query_matrix(&t, a0, a1).unwrap();
            assert!(q.is_symmetric());
            let v = rng::gaussian_vector(&mut r, d);
            let direct = greedy_score(&t, &v, a0, a1).unwrap();
            let via_q = dot(&v, &q.matvec(&v));
            assert!((direct - via_q).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn one_dimensional_instance() {
        let v = VectorFamily::from_dense_rows(vec![vec![0.5]; 4]).unwrap();
        let out = ks_greedy_exact(&v, 4, 2).unwrap();
        assert_eq!(out.order.len(), 2);
        assert!((out.final_norm - 0.5).abs() < 1e-15);
        assert!(out.final_norm <= 0.5 + 2.0 * 0.5);
    }

    #[test]
    fn coordinate_copies_balance() {
        let mut rows = Vec::new();
        for j in 0..2 {
            for _ in 0..4 {
                let mut e = vec![0.0, 0.0];
                e[j] = 0.5;
                rows.push(e);
            }
        }
        let v = VectorFamily::from_dense_rows(rows).unwrap();
        let out = ks_greedy_exact(&v, 4, 3).unwrap();
        // subset oracle over all 56 triples
        let mut best = f64::MAX;
        for a in 0..8 {
            for b in a + 1..8 {
                for c in b + 1..8 {
                    let ones = [a, b, c].iter().filter(|&&i| i < 4).count();
                    best = best.min(ones.max(3 - ones) as f64 / 4.0);
                }
            }
        }
        assert_eq!(best, 0.5);
        assert!((out.final_norm - best).abs() < 1e-15);
        assert!(out.final_norm < out.barriers[3]);
    }

    #[test]
    fn potentials_nonincreasing_and_bound() {
        for seed in 0..5 {
            let v = harmonic_frame(4, 25, seed).unwrap();
            let out = ks_greedy_exact(&v, 25, 30).unwrap();
            for w in out.potentials.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            assert!(out.final_norm < out.bound);
            assert_eq!(out.selection.support(), 30);
            assert!(out.scores.iter().all(|&s| s <= 1.0));
        }
    }

    #[test]
    fn rotation_invariance() {
        let v = harmonic_frame(4, 10, 2).unwrap();
        let q = random_orthogonal(4, 9);
        let rotated = VectorFamily::from_dense_rows((0..v.len()).map(|i| q.matvec(&v.dense(i))).collect()).unwrap();
        let a = ks_greedy_exact(&v, 10, 12).unwrap();
        let b = ks_greedy_exact(&rotated, 10, 12).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn preconditions() {
        let v = harmonic_frame(4, 25, 0).unwrap();
        assert!(matches!(ks_greedy_exact(&v, 20, 3), Err(Error::Precondition(_))));
        assert!(matches!(ks_greedy_exact(&v, 25, 100), Err(Error::Config(_))));
        let bad = VectorFamily::from_dense_rows(vec![vec![0.5, 0.0]; 4]).unwrap();
        assert!(matches!(ks_greedy_exact(&bad, 2, 1), Err(Error::Precondition(_)) | Err(Error::IsotropyViolation { .. })));
        let aipe = KsConfig::with_backend(Backend::Aipe, 0.995, 0.5, 1);
        assert!(matches!(ks_select(&v, 25, 3, aipe), Err(Error::Config(_))));
        let afn = KsConfig::with_backend(Backend::Afn, 0.6, 0.5, 1);
        assert!(matches!(ks_select(&v, 25, 3, afn), Err(Error::Config(_))));
    }

    #[test]
    fn exact_backend_is_greedy() {
        let v = harmonic_frame(4, 25, 4).unwrap();
        let a = ks_greedy_exact(&v, 25, 10).unwrap();
        let b = ks_select(&v, 25, 10, KsConfig { seed: 77, ..KsConfig::exact() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aipe_backend_within_scaled_bound() {
        let v = harmonic_frame(4, 25, 5).unwrap();
        let cfg = KsConfig { profile: Profile::Desk, ..KsConfig::with_backend(Backend::Aipe, 0.9, 0.5, 3) };
        let out = ks_select(&v, 25, 10, cfg).unwrap();
        let exact = ks_greedy_exact(&v, 25, 10).unwrap();
        assert!(out.final_norm <= out.barriers[10] / 0.9);
        assert!(out.final_norm <= exact.final_norm.max(out.barriers[10]) / 0.9);
        assert_eq!(out.selection.support(), 10);
    }
}
