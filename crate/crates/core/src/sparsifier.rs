//! Two-barrier spectral sparsification: a linear-scan reference and a
//! search-tree accelerated variant.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_isotropy, isotropy_deviation, lower_potential, upper_potential, EigenDecomposition, SquareMatrix,
    VectorFamily, WeightedSelection,
};
use crate::psearch::{BatchedVectorSearchTree, MatrixSearchTree};

/// Search structure used by the accelerated variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Vector,
    Matrix,
}

/// Matrix-multiplication exponent used to pick the tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub omega: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { omega: 3.0 }
    }
}

impl CostModel {
    /// `(m d^{omega - 1}, sum_i nnz(v_i)^2)`.
    pub fn costs(&self, v: &VectorFamily) -> (f64, f64) {
        let dense = v.len() as f64 * (v.dim() as f64).powf(self.omega - 1.0);
        (dense, v.outer_nnz() as f64)
    }

    /// Vector tree iff `m d^{omega - 1} <= sum_i nnz(v_i)^2`.
    pub fn choose(&self, v: &VectorFamily) -> TreeKind {
        let (dense, sparse) = self.costs(v);
        if dense <= sparse {
            TreeKind::Vector
        } else {
            TreeKind::Matrix
        }
    }
}

/// `ceil(d / eps^2)`, tolerant of roundoff in `eps^2`.
pub fn iteration_count(d: usize, epsilon: f64) -> usize {
    ((d as f64 / (epsilon * epsilon)) - 1e-9).ceil().max(1.0) as usize
}

/// One step of the barrier loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssStep {
    pub index: usize,
    pub c: f64,
    /// `v_j^T (L - U) v_j`.
    pub gap: f64,
    /// `sum_i v_i^T (L - U) v_i`.
    pub gap_sum: f64,
    pub search_nanos: u64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssOutput {
    pub selection: WeightedSelection,
    /// `A_T / T`.
    pub a_final: SquareMatrix,
    pub iterations: usize,
    pub delta_upper: f64,
    pub delta_lower: f64,
    pub steps: Vec<BssStep>,
    /// `Phi^{u_t}(A_t)` for `t = 0..=T`.
    pub upper_potentials: Vec<f64>,
    /// `Phi_{l_t}(A_t)` for `t = 0..=T`.
    pub lower_potentials: Vec<f64>,
    pub tree: Option<TreeKind>,
    pub fallbacks: usize,
    pub warnings: Vec<String>,
}

impl BssOutput {
    pub fn search_nanos(&self) -> u64 {
        self.steps.iter().map(|s| s.search_nanos).sum()
    }
}

fn validate(v: &VectorFamily, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("0 < epsilon < 1 violated (epsilon = {epsilon})")));
    }
    if v.is_empty() {
        return Err(Error::EmptyInput("vector family"));
    }
    if !check_isotropy(v, 1e-6) {
        return Err(Error::IsotropyViolation { deviation: isotropy_deviation(v) });
    }
    Ok(())
}

/// `(L_t, U_t)` from one eigendecomposition of `A_{t-1}`.
fn barrier_matrices(
    eig: &EigenDecomposition,
    l_prev: f64,
    l_new: f64,
    u_prev: f64,
    u_new: f64,
) -> Result<(SquareMatrix, SquareMatrix)> {
    let vals = &eig.values;
    if vals.iter().any(|&x| x <= l_new) {
        return Err(Error::BarrierViolation { barrier: l_new, eigenvalue: eig.lambda_min() });
    }
    if vals.iter().any(|&x| x >= u_new) {
        return Err(Error::BarrierViolation { barrier: u_new, eigenvalue: eig.lambda_max() });
    }
    let dl = lower_potential(vals, l_new) - lower_potential(vals, l_prev);
    let du = upper_potential(vals, u_prev) - upper_potential(vals, u_new);
    if !(dl > 0.0 && du > 0.0) {
        return Err(Error::NonFinite("barrier potential difference"));
    }
    let l = eig.map(|x| {
        let a = 1.0 / (x - l_new);
        a * a / dl - a
    });
    let u = eig.map(|x| {
        let b = 1.0 / (u_new - x);
        b * b / du + b
    });
    Ok((l, u))
}

enum Search<'a> {
    Scan,
    Vector(&'a BatchedVectorSearchTree),
    Matrix(&'a MatrixSearchTree),
}

/// Witness maximizing `v^T Q v / v^T P v` over indices with `v^T Q v >= 0`
/// and `v^T P v > 0` (smallest index on ties), plus the gap sum.
fn scan(v: &VectorFamily, q: &SquareMatrix, p: &SquareMatrix) -> (Option<(usize, f64)>, f64) {
    let mut best: Option<(usize, f64)> = None;
    let mut sum = 0.0;
    for (i, x) in v.iter().enumerate() {
        let g = x.quad(q);
        sum += g;
        let pp = x.quad(p);
        if g >= 0.0 && pp > 0.0 && best.map_or(true, |(_, r)| g / pp > r) {
            best = Some((i, g / pp));
        }
    }
    (best, sum)
}

/// `v_j^T Q v_j / v_j^T P v_j` when `j` is a valid witness.
fn witness_ratio(v: &VectorFamily, j: usize, q: &SquareMatrix, p: &SquareMatrix) -> Option<f64> {
    let x = v.get(j);
    let (g, pp) = (x.quad(q), x.quad(p));
    (g >= 0.0 && pp > 0.0).then(|| g / pp)
}

fn run(
    v: &VectorFamily,
    epsilon: f64,
    delta_lower: f64,
    search: Search<'_>,
    tree: Option<TreeKind>,
    refine_rounds: usize,
) -> Result<BssOutput> {
    let d = v.dim();
    let big_t = iteration_count(d, epsilon);
    let delta_upper = 1.0;
    let mut u = d as f64 / epsilon;
    let mut l = -(d as f64) / epsilon;
    let mut a = SquareMatrix::zeros(d);
    let mut selection = WeightedSelection::new();
    let mut steps = Vec::with_capacity(big_t);
    let mut ups = Vec::with_capacity(big_t + 1);
    let mut lows = Vec::with_capacity(big_t + 1);
    let mut fallbacks = 0;
    let mut warnings = Vec::new();
    let gram = if matches!(search, Search::Scan) { None } else { Some(v.gram()) };
    for t in 1..=big_t {
        let eig = a.eigen()?;
        ups.push(upper_potential(&eig.values, u));
        lows.push(lower_potential(&eig.values, l));
        let (u_new, l_new) = (u + delta_upper, l + delta_lower);
        let (lm, um) = barrier_matrices(&eig, l, l_new, u, u_new)?;
        let q = lm.sub(&um);
        let p = lm.add(&um);

        let start = Instant::now();
        let mut found: Option<(usize, f64)> = None;
        let mut gap_sum = f64::NAN;
        let mut fallback = false;
        match search {
            Search::Scan => {
                let (hit, sum) = scan(v, &q, &p);
                found = hit;
                gap_sum = sum;
            }
            Search::Vector(_) | Search::Matrix(_) => {
                let query = |m: &SquareMatrix| match search {
                    Search::Vector(tree) => tree.query_positive(m),
                    Search::Matrix(tree) => tree.query_positive(m),
                    Search::Scan => unreachable!(),
                };
                let ratio_hit = match search {
                    Search::Vector(tree) => tree.query_ratio(&q, &p),
                    Search::Matrix(tree) => tree.query_ratio(&q, &p),
                    Search::Scan => unreachable!(),
                };
                match query(&q) {
                    Ok(hit) => {
                        found = witness_ratio(v, hit.index, &q, &p).map(|r| (hit.index, r));
                        if found.is_none() {
                            warnings.push(format!("iteration {t}: tree answer {} is not a witness; scanning", hit.index));
                        }
                        if let Some((j, r)) =
                            ratio_hit.ok().and_then(|h| witness_ratio(v, h.index, &q, &p).map(|r| (h.index, r)))
                        {
                            if found.map_or(true, |(_, r0)| r > r0) {
                                found = Some((j, r));
                            }
                        }
                        if let Some((_, r0)) = found {
                            // bisect on eta: a positive answer for Q - eta P has ratio > eta
                            let (mut lo, mut hi) = (r0, 1.0);
                            for _ in 0..refine_rounds {
                                let mid = 0.5 * (lo + hi);
                                let better = query(&q.sub(&p.scaled(mid)))
                                    .ok()
                                    .and_then(|h| witness_ratio(v, h.index, &q, &p).map(|r| (h.index, r)))
                                    .filter(|&(_, r)| r > lo);
                                match better {
                                    Some(hit) => {
                                        lo = hit.1;
                                        found = Some(hit);
                                    }
                                    None => hi = mid,
                                }
                            }
                        }
                    }
                    Err(e) => warnings.push(format!("iteration {t}: tree search failed ({e}); scanning")),
                }
            }
        }
        let mut search_nanos = start.elapsed().as_nanos() as u64;

        if let Some(g) = &gram {
            // <Q, G> is the gap sum; evaluated outside the timed search
            gap_sum = q.inner(g);
            if found.is_none() {
                let start = Instant::now();
                found = scan(v, &q, &p).0;
                search_nanos += start.elapsed().as_nanos() as u64;
                fallback = true;
                fallbacks += 1;
            }
        }
        let (j, _) = found.ok_or(Error::NoWitness { iteration: t })?;
        let x = v.dense(j);
        let gap = v.get(j).quad(&q);
        let c = v.get(j).quad(&p) / 2.0;
        a.add_outer(&x, 1.0 / c);
        selection.add(j, 1.0 / (c * big_t as f64));
        steps.push(BssStep { index: j, c, gap, gap_sum, search_nanos, fallback });
        u = u_new;
        l = l_new;
    }
    let eig = a.eigen()?;
    if eig.lambda_min() <= l || eig.lambda_max() >= u {
        let (barrier, eigenvalue) =
            if eig.lambda_min() <= l { (l, eig.lambda_min()) } else { (u, eig.lambda_max()) };
        return Err(Error::BarrierViolation { barrier, eigenvalue });
    }
    ups.push(upper_potential(&eig.values, u));
    lows.push(lower_potential(&eig.values, l));
    Ok(BssOutput {
        selection,
        a_final: a.scaled(1.0 / big_t as f64),
        iterations: big_t,
        delta_upper,
        delta_lower,
        steps,
        upper_potentials: ups,
        lower_potentials: lows,
        tree,
        fallbacks,
        warnings,
    })
}

/// Two-barrier loop with `delta_L = 1/(1 + 2 eps)` and a full linear scan per iteration.
pub fn bss_reference(v: &VectorFamily, epsilon: f64) -> Result<BssOutput> {
    validate(v, epsilon)?;
    run(v, epsilon, 1.0 / (1.0 + 2.0 * epsilon), Search::Scan, None, 0)
}

/// Default number of `Q - eta P` refinement queries per iteration.
pub const DEFAULT_REFINE_ROUNDS: usize = 10;

/// Two-barrier loop with `delta_L = 1/(1 + 3 eps)` and a positive-search tree
/// chosen by `cost_model`.
pub fn sparsify_fast(v: &VectorFamily, epsilon: f64, cost_model: CostModel) -> Result<BssOutput> {
    sparsify_fast_with(v, epsilon, cost_model, DEFAULT_REFINE_ROUNDS)
}

/// As [`sparsify_fast`]. Besides the positive query on `Q = L - U`, one
/// ratio-guided descent and `refine_rounds` bisection queries on
/// `Q - eta (L + U)` look for a witness with a larger ratio
/// `v^T (L - U) v / v^T (L + U) v`; the best witness found is taken.
pub fn sparsify_fast_with(v: &VectorFamily, epsilon: f64, cost_model: CostModel, refine_rounds: usize) -> Result<BssOutput> {
    validate(v, epsilon)?;
    let delta_lower = 1.0 / (1.0 + 3.0 * epsilon);
    match cost_model.choose(v) {
        TreeKind::Vector => {
            let tree = BatchedVectorSearchTree::new(v)?;
            run(v, epsilon, delta_lower, Search::Vector(&tree), Some(TreeKind::Vector), refine_rounds)
        }
        TreeKind::Matrix => {
            let leaves: Vec<SquareMatrix> = (0..v.len())
                .map(|i| {
                    let mut m = SquareMatrix::zeros(v.dim());
                    m.add_outer(&v.dense(i), 1.0);
                    m
                })
                .collect();
            let tree = MatrixSearchTree::new(&leaves)?;
            run(v, epsilon, delta_lower, Search::Matrix(&tree), Some(TreeKind::Matrix), refine_rounds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifierReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub support: usize,
    pub support_bound: usize,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Rebuilds `sum_i s_i v_i v_i^T` and checks it against `(1 - eps - 2 eps^2, 1 + eps)`
/// and the support bound `ceil(d / eps^2)`.
pub fn verify_sparsifier(v: &VectorFamily, sel: &WeightedSelection, epsilon: f64) -> Result<SparsifierReport> {
    let a = v.weighted_gram(&sel.weights(v.len()));
    let eig = a.eigen()?;
    let lower = 1.0 - epsilon - 2.0 * epsilon * epsilon;
    let upper = 1.0 + epsilon;
    let support_bound = iteration_count(v.dim(), epsilon);
    let (lambda_min, lambda_max) = (eig.lambda_min(), eig.lambda_max());
    Ok(SparsifierReport {
        lambda_min,
        lambda_max,
        support: sel.support(),
        support_bound,
        lower,
        upper,
        pass: lambda_min > lower && lambda_max < upper && sel.support() <= support_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::random_isotropic;

    fn spectrum(a: &SquareMatrix) -> (f64, f64) {
        let e = a.eigen().unwrap();
        (e.lambda_min(), e.lambda_max())
    }

    #[test]
    fn one_dimensional_recurrence() {
        let v = VectorFamily::from_dense_rows(vec![vec![0.5]; 4]).unwrap();
        let out = bss_reference(&v, 0.5).unwrap();
        assert_eq!(out.iterations, 4);
        let a = out.a_final.get(0, 0);
        assert!(a > 0.0 && a < 1.5);
        // independent scalar recurrence
        let (mut u, mut l, mut x) = (2.0f64, -2.0f64, 0.0f64);
        let dl = 1.0 / 2.0;
        for _ in 0..4 {
            let (un, ln) = (u + 1.0, l + dl);
            let pl = 1.0 / (x - ln) - 1.0 / (x - l);
            let pu = 1.0 / (u - x) - 1.0 / (un - x);
            let lt = (1.0 / (x - ln)).powi(2) / pl - 1.0 / (x - ln);
            let ut = (1.0 / (un - x)).powi(2) / pu + 1.0 / (un - x);
            let c = 0.25 * (lt + ut) / 2.0;
            x += 0.25 / c;
            u = un;
            l = ln;
        }
        assert!((a - x / 4.0).abs() < 1e-12);
    }

    #[test]
    fn basis_family() {
        let d = 5;
        let rows = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let v = VectorFamily::from_dense_rows(rows).unwrap();
        let out = bss_reference(&v, 0.25).unwrap();
        let (lo, hi) = spectrum(&out.a_final);
        assert!(lo > 0.5625 && hi < 1.25, "{lo} {hi}");
    }

    #[test]
    fn barrier_seed() {
        let v = random_isotropic(16, 4, 1).unwrap();
        let out = bss_reference(&v, 0.3).unwrap();
        assert!((out.upper_potentials[0] - 0.3).abs() < 1e-15);
        assert!((out.lower_potentials[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn potentials_monotone_and_witness_positive() {
        for seed in 0..4 {
            let v = random_isotropic(32, 4, seed).unwrap();
            for out in [bss_reference(&v, 0.25).unwrap(), sparsify_fast(&v, 0.25, CostModel::default()).unwrap()] {
                for w in out.upper_potentials.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-9));
                }
                for w in out.lower_potentials.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-9));
                }
                for s in &out.steps {
                    assert!(s.gap >= 0.0 && s.c > 0.0);
                    assert!(s.gap_sum >= -1e-9);
                }
                let support = out.selection.support();
                assert!(support <= iteration_count(4, 0.25));
            }
        }
    }

    #[test]
    fn fast_gap_sum_strictly_positive() {
        let v = random_isotropic(64, 4, 9).unwrap();
        let out = sparsify_fast(&v, 0.25, CostModel::default()).unwrap();
        assert!(out.steps.iter().all(|s| s.gap_sum > 0.0));
    }

    #[test]
    fn weights_reconstruct_a_final() {
        let v = random_isotropic(32, 4, 3).unwrap();
        let out = bss_reference(&v, 0.4).unwrap();
        let g = v.weighted_gram(&out.selection.weights(v.len()));
        assert!(g.max_abs_diff(&out.a_final) < 1e-10);
    }

    #[test]
    fn fast_window_on_random_family() {
        let v = random_isotropic(64, 4, 5).unwrap();
        let out = sparsify_fast(&v, 0.25, CostModel::default()).unwrap();
        let (lo, hi) = spectrum(&out.a_final);
        assert!(lo > 1.0 - 0.25 - 0.125 && hi < 1.25, "{lo} {hi}");
        assert!(verify_sparsifier(&v, &out.selection, 0.25).unwrap().pass);
    }

    #[test]
    fn fast_matrix_tree_window() {
        let mut sparse = VectorFamily::new(4);
        let s = 0.5f64.sqrt();
        for i in 0..4 {
            sparse.push_sparse(vec![(i, s)]).unwrap();
            sparse.push_sparse(vec![(i, s)]).unwrap();
        }
        assert_eq!(CostModel::default().choose(&sparse), TreeKind::Matrix);
        let out = sparsify_fast(&sparse, 0.5, CostModel::default()).unwrap();
        assert_eq!(out.tree, Some(TreeKind::Matrix));
        assert!(verify_sparsifier(&sparse, &out.selection, 0.5).unwrap().pass);
    }

    #[test]
    fn cost_model_choice() {
        let d = 4;
        let dense = random_isotropic(d * d, d, 2).unwrap();
        assert_eq!(CostModel::default().choose(&dense), TreeKind::Vector);
        let mut sparse = VectorFamily::new(6);
        for i in 0..6 {
            sparse.push_sparse(vec![(i, 0.6), ((i + 1) % 6, 0.3)]).unwrap();
        }
        assert_eq!(CostModel::default().choose(&sparse), TreeKind::Matrix);
        let (a, b) = CostModel::default().costs(&sparse);
        assert_eq!((a, b), (6.0 * 36.0, 24.0));
    }

    #[test]
    fn verify_examples() {
        let v = random_isotropic(16, 4, 4).unwrap();
        let empty = verify_sparsifier(&v, &WeightedSelection::new(), 0.25).unwrap();
        assert_eq!(empty.lambda_min, 0.0);
        assert!(!empty.pass);
        let all = WeightedSelection::from_indices(&(0..16).collect::<Vec<_>>());
        let r = verify_sparsifier(&v, &all, 0.5).unwrap();
        assert!((r.lambda_min - 1.0).abs() < 1e-9 && (r.lambda_max - 1.0).abs() < 1e-9);
        assert!(r.pass);
        let out = bss_reference(&v, 0.5).unwrap();
        assert!(verify_sparsifier(&v, &out.selection, 0.5).unwrap().pass);
    }

    #[test]
    fn preconditions() {
        let v = VectorFamily::from_dense_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(bss_reference(&v, 0.5), Err(Error::IsotropyViolation { .. })));
        let v = random_isotropic(8, 2, 0).unwrap();
        assert!(matches!(bss_reference(&v, 1.0), Err(Error::Config(_))));
        assert!(matches!(sparsify_fast(&v, 0.0, CostModel::default()), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic() {
        let v = random_isotropic(32, 4, 8).unwrap();
        let a = sparsify_fast(&v, 0.3, CostModel::default()).unwrap();
        let b = sparsify_fast(&v, 0.3, CostModel::default()).unwrap();
        assert_eq!(a.selection, b.selection);
        assert_eq!(a.a_final, b.a_final);
        let c = bss_reference(&v, 0.3).unwrap();
        let e = bss_reference(&v, 0.3).unwrap();
        assert_eq!(c.selection, e.selection);
    }
}
