//! Random-projection furthest-neighbor structures and the unit-sphere transform
//! that turns minimum inner product into furthest neighbor.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng;
use crate::sketch::derive_seed;

type Key = (OrderedFloat<f64>, usize);

/// Ordered multiset of `(key, id)` pairs backed by a B-tree.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SortedKeyList {
    set: BTreeSet<Key>,
}

impl SortedKeyList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, usize)>) -> Self {
        Self { set: pairs.into_iter().map(|(k, id)| (OrderedFloat(k), id)).collect() }
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn insert(&mut self, key: f64, id: usize) {
        self.set.insert((OrderedFloat(key), id));
    }

    pub fn delete(&mut self, key: f64, id: usize) -> Result<()> {
        if self.set.remove(&(OrderedFloat(key), id)) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("key {key} with id {id}")))
        }
    }

    /// Entries with key `<= t`, ascending.
    pub fn search_leq(&self, t: f64) -> impl DoubleEndedIterator<Item = (f64, usize)> + '_ {
        self.set.range(..=(OrderedFloat(t), usize::MAX)).map(|&(k, id)| (k.0, id))
    }

    /// Entries with key `>= t`, ascending.
    pub fn search_geq(&self, t: f64) -> impl DoubleEndedIterator<Item = (f64, usize)> + '_ {
        self.set.range((OrderedFloat(t), 0)..).map(|&(k, id)| (k.0, id))
    }

    pub fn max(&self) -> Option<(f64, usize)> {
        self.set.last().map(|&(k, id)| (k.0, id))
    }

    pub fn min(&self) -> Option<(f64, usize)> {
        self.set.first().map(|&(k, id)| (k.0, id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.set.iter().map(|&(k, id)| (k.0, id))
    }
}

/// Solves `e^{t^2/2} / t = 2n` on `t >= 1` by bisection.
pub fn projection_threshold(n: usize) -> f64 {
    let target = (2.0 * n.max(1) as f64).ln();
    // g(t) = t^2/2 - ln t - ln(2n), increasing on [1, inf)
    let g = |t: f64| 0.5 * t * t - t.ln() - target;
    let mut lo = 1.0;
    let mut hi = 2.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `ceil(c1 n^{1/cbar^2} log^{(1 - 1/cbar^2)/2} n)`, at least 1.
pub fn direction_count(n: usize, cbar: f64, c1: f64) -> usize {
    let n = n.max(1) as f64;
    let inv = 1.0 / (cbar * cbar);
    let val = c1 * n.powf(inv) * n.ln().max(0.0).powf((1.0 - inv) / 2.0);
    (val.ceil() as usize).max(1)
}

/// `ceil(cs log log(d / delta))`, at least 1.
pub fn copy_count(d: usize, delta: f64, cs: f64) -> usize {
    let inner = (d.max(1) as f64 / delta).ln();
    if inner <= 1.0 {
        return 1;
    }
    ((cs * inner.ln()).ceil() as usize).max(1)
}

/// Shared point payload.
pub type Point = Arc<[f64]>;

/// One furthest-neighbor decision structure for a fixed approximation `cbar`.
#[derive(Debug, Clone)]
pub struct DfnStructure {
    dim: usize,
    cbar: f64,
    t: f64,
    directions: Vec<Vec<f64>>,
    lists: Vec<SortedKeyList>,
    points: BTreeMap<usize, Point>,
    seed: u64,
}

fn check_dim(p: &[f64], dim: usize) -> Result<()> {
    if p.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
    }
    Ok(())
}

fn better(found: (usize, f64), best: Option<(usize, f64)>) -> bool {
    best.map_or(true, |(bid, bd)| found.1 > bd || (found.1 == bd && found.0 < bid))
}

impl DfnStructure {
    /// `n_hint` sizes the direction count and threshold; defaults to `points.len()`.
    pub fn build(
        points: &[(usize, Vec<f64>)],
        dim: usize,
        cbar: f64,
        c1: f64,
        n_hint: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if !(cbar > 1.0) {
            return Err(Error::Config(format!("cbar > 1 violated (cbar = {cbar})")));
        }
        let n = n_hint.unwrap_or(points.len()).max(1);
        let ell = direction_count(n, cbar, c1);
        let directions: Vec<Vec<f64>> =
            (0..ell).map(|i| rng::gaussian_vector(&mut rng::stream(seed, i as u64), dim)).collect();
        let mut s = Self {
            dim,
            cbar,
            t: projection_threshold(n),
            lists: vec![SortedKeyList::new(); ell],
            directions,
            points: BTreeMap::new(),
            seed,
        };
        for (id, p) in points {
            s.insert(*id, p.clone())?;
        }
        Ok(s)
    }

    pub fn direction_count(&self) -> usize {
        self.directions.len()
    }

    pub fn threshold(&self) -> f64 {
        self.t
    }

    pub fn cbar(&self) -> f64 {
        self.cbar
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i]
    }

    pub fn list(&self, i: usize) -> &SortedKeyList {
        &self.lists[i]
    }

    pub fn insert(&mut self, id: usize, p: Vec<f64>) -> Result<()> {
        self.insert_shared(id, p.into())
    }

    pub fn insert_shared(&mut self, id: usize, p: Point) -> Result<()> {
        check_dim(&p, self.dim)?;
        if self.points.contains_key(&id) {
            return Err(Error::Config(format!("duplicate point id {id}")));
        }
        for (g, list) in self.directions.iter().zip(self.lists.iter_mut()) {
            list.insert(dot(g, &p), id);
        }
        self.points.insert(id, p);
        Ok(())
    }

    pub fn delete(&mut self, id: usize) -> Result<()> {
        let p = self.points.remove(&id).ok_or_else(|| Error::NotFound(format!("point id {id}")))?;
        for (g, list) in self.directions.iter().zip(self.lists.iter_mut()) {
            list.delete(dot(g, &p), id)?;
        }
        Ok(())
    }

    /// Candidate ids: entries with `|<g_i, q - p>| >= T`, most extreme first
    /// within each direction, capped at `2 ell + 1` distinct ids overall.
    pub fn candidates(&self, q: &[f64], r: f64) -> Vec<usize> {
        let cap = 2 * self.directions.len() + 1;
        let big_t = r * self.t / self.cbar;
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (g, list) in self.directions.iter().zip(&self.lists) {
            let kq = dot(g, q);
            let mut low = list.search_leq(kq - big_t).peekable();
            let mut high = list.search_geq(kq + big_t).rev().peekable();
            loop {
                if out.len() >= cap {
                    return out;
                }
                let next = match (low.peek(), high.peek()) {
                    (None, None) => break,
                    (Some(_), None) => low.next(),
                    (None, Some(_)) => high.next(),
                    (Some(a), Some(b)) => {
                        if kq - a.0 >= b.0 - kq {
                            low.next()
                        } else {
                            high.next()
                        }
                    }
                };
                let (_, id) = next.expect("peeked");
                if seen.insert(id) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// Furthest candidate at distance `>= r / cbar`, or `None`.
    pub fn query(&self, q: &[f64], r: f64) -> Option<(usize, f64)> {
        if q.len() != self.dim || !(r > 0.0) {
            return None;
        }
        let floor = r / self.cbar;
        let mut best: Option<(usize, f64)> = None;
        for id in self.candidates(q, r) {
            let dist = distance(&self.points[&id], q);
            if dist >= floor && better((id, dist), best) {
                best = Some((id, dist));
            }
        }
        best
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Θ-constants for [`AfnStructure`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfnParams {
    /// Multiplier on the direction count of each copy.
    pub c1: f64,
    /// Multiplier on the number of independent copies.
    pub cs: f64,
    /// Relative precision of the radius search; also the slack in `cbar + delta`.
    pub delta: f64,
}

impl Default for AfnParams {
    fn default() -> Self {
        Self { c1: 1.0, cs: 1.0, delta: 0.1 }
    }
}

/// Outcome of an [`AfnStructure`] query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfnAnswer {
    pub id: usize,
    pub distance: f64,
    /// Largest radius at which some copy succeeded.
    pub radius: f64,
}

/// Amplified furthest-neighbor structure: independent DFN copies plus
/// per-coordinate lists for the box width.
///
/// Several replicas (independent sets of copies) may share one point set and
/// one coordinate box; each replica answers queries on its own.
#[derive(Debug, Clone)]
pub struct AfnStructure {
    dim: usize,
    cbar: f64,
    params: AfnParams,
    replicas: Vec<Vec<DfnStructure>>,
    coords: Vec<SortedKeyList>,
    points: BTreeMap<usize, Point>,
    bw: f64,
}

impl AfnStructure {
    pub fn build(
        points: &[(usize, Vec<f64>)],
        dim: usize,
        cbar: f64,
        params: AfnParams,
        n_hint: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        Self::build_replicated(points, dim, cbar, params, n_hint, 1, seed)
    }

    pub fn build_replicated(
        points: &[(usize, Vec<f64>)],
        dim: usize,
        cbar: f64,
        params: AfnParams,
        n_hint: Option<usize>,
        replicas: usize,
        seed: u64,
    ) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::Config("replica count must be at least 1".into()));
        }
        let s = copy_count(dim, params.delta, params.cs);
        let n = n_hint.unwrap_or(points.len());
        let replicas = (0..replicas)
            .map(|r| {
                let rseed = derive_seed(seed, r as u64);
                (0..s)
                    .map(|i| DfnStructure::build(&[], dim, cbar, params.c1, Some(n), derive_seed(rseed, i as u64)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut a = Self {
            dim,
            cbar,
            params,
            replicas,
            coords: vec![SortedKeyList::new(); dim],
            points: BTreeMap::new(),
            bw: 0.0,
        };
        for (id, p) in points {
            a.insert_no_refresh(*id, p.clone().into())?;
        }
        a.refresh_boxwidth();
        Ok(a)
    }

    fn refresh_boxwidth(&mut self) {
        self.bw = self
            .coords
            .iter()
            .filter_map(|l| Some(l.max()?.0 - l.min()?.0))
            .fold(0.0, f64::max);
    }

    fn insert_no_refresh(&mut self, id: usize, p: Point) -> Result<()> {
        check_dim(&p, self.dim)?;
        if self.points.contains_key(&id) {
            return Err(Error::Config(format!("duplicate point id {id}")));
        }
        for c in self.replicas.iter_mut().flatten() {
            c.insert_shared(id, p.clone())?;
        }
        for (j, list) in self.coords.iter_mut().enumerate() {
            list.insert(p[j], id);
        }
        self.points.insert(id, p);
        Ok(())
    }

    pub fn insert(&mut self, id: usize, p: Vec<f64>) -> Result<()> {
        self.insert_no_refresh(id, p.into())?;
        self.refresh_boxwidth();
        Ok(())
    }

    pub fn delete(&mut self, id: usize) -> Result<()> {
        let p = self.points.remove(&id).ok_or_else(|| Error::NotFound(format!("point id {id}")))?;
        for c in self.replicas.iter_mut().flatten() {
            c.delete(id)?;
        }
        for (j, list) in self.coords.iter_mut().enumerate() {
            list.delete(p[j], id)?;
        }
        self.refresh_boxwidth();
        Ok(())
    }

    pub fn boxwidth(&self) -> f64 {
        self.bw
    }

    pub fn copy_count(&self) -> usize {
        self.replicas[0].len()
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn copies(&self) -> &[DfnStructure] {
        &self.replicas[0]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> Option<&[f64]> {
        self.points.get(&id).map(|p| &p[..])
    }

    /// Initial bracket `[bw/2, max(sqrt(d)/eps bw, bw/2)]` with `eps = cbar - 1`.
    pub fn radius_bracket(&self) -> (f64, f64) {
        let lo = self.bw / 2.0;
        let eps = self.cbar - 1.0;
        let hi = ((self.dim as f64).sqrt() / eps * self.bw).max(lo);
        (lo, hi)
    }

    fn probe(&self, replica: usize, q: &[f64], r: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for c in &self.replicas[replica] {
            if let Some(found) = c.query(q, r) {
                if better(found, best) {
                    best = Some(found);
                }
            }
        }
        best
    }

    pub fn query(&self, q: &[f64]) -> Result<Option<AfnAnswer>> {
        self.query_replica(0, q)
    }

    /// Binary search over radii; returns the furthest point found by any
    /// successful probe, or `Ok(None)` if every copy fails at `bw/2`.
    pub fn query_replica(&self, replica: usize, q: &[f64]) -> Result<Option<AfnAnswer>> {
        check_dim(q, self.dim)?;
        if replica >= self.replicas.len() {
            return Err(Error::IndexOutOfRange { index: replica, len: self.replicas.len() });
        }
        let Some((&first, p)) = self.points.iter().next() else {
            return Err(Error::EmptyInput("furthest-neighbor structure"));
        };
        if self.bw == 0.0 {
            return Ok(Some(AfnAnswer { id: first, distance: distance(p, q), radius: 0.0 }));
        }
        let (mut lo, mut hi) = self.radius_bracket();
        let Some(mut best) = self.probe(replica, q, lo) else {
            return Ok(None);
        };
        let mut accepted = lo;
        let mut rounds = 0;
        while hi > lo * (1.0 + self.params.delta) && rounds < 64 {
            rounds += 1;
            let mid = (lo * hi).sqrt();
            match self.probe(replica, q, mid) {
                Some(found) => {
                    lo = mid;
                    accepted = mid;
                    if better(found, Some(best)) {
                        best = found;
                    }
                }
                None => hi = mid,
            }
        }
        Ok(Some(AfnAnswer { id: best.0, distance: best.1, radius: accepted }))
    }
}

/// `phi(x) = (x / D_X, 0, sqrt(1 - |x|^2 / D_X^2))`.
pub fn transform_point(x: &[f64], dx: f64) -> Result<Vec<f64>> {
    let n = norm(x);
    if n > dx * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("|x| = {n} exceeds D_X = {dx}")));
    }
    let mut out: Vec<f64> = x.iter().map(|v| v / dx).collect();
    out.push(0.0);
    out.push((1.0 - (n / dx).powi(2)).max(0.0).sqrt());
    Ok(out)
}

/// `psi(y) = (y / |y|, 0, 0)`, i.e. the query map with `D_Y = |y|`.
pub fn transform_query(y: &[f64]) -> Result<Vec<f64>> {
    let n = norm(y);
    if !(n > 0.0) {
        return Err(Error::Precondition("query must be nonzero".into()));
    }
    let mut out: Vec<f64> = y.iter().map(|v| v / n).collect();
    out.push(0.0);
    out.push(0.0);
    Ok(out)
}

/// Transformed dataset and query plus `(D_X, D_Y)`, with `D_X = max |x|`.
pub fn minip_transform(xs: &[Vec<f64>], q: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64, f64)> {
    let dx = xs.iter().map(|x| norm(x)).fold(0.0, f64::max);
    if !(dx > 0.0) {
        return Err(Error::EmptyInput("dataset with a nonzero point"));
    }
    let pts = xs.iter().map(|x| transform_point(x, dx)).collect::<Result<Vec<_>>>()?;
    Ok((pts, transform_query(q)?, dx, norm(q)))
}

/// Exhaustive `argmin_i <y_i, q>`, ties to the smallest index.
pub fn exact_min_ip_oracle(ys: &[Vec<f64>], q: &[f64]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, y) in ys.iter().enumerate() {
        check_dim(y, q.len())?;
        let v = dot(y, q);
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.ok_or(Error::EmptyInput("dataset"))
}

/// Exhaustive furthest point, ties to the smallest index.
pub fn exact_furthest(points: &[Vec<f64>], q: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = distance(p, q);
        if best.map_or(true, |(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best
}
