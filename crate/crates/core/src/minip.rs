//! Adaptive-robust approximate minimum inner product search: sketch ensemble
//! in front of replicated furthest-neighbor structures.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::afn::{AfnParams, AfnStructure};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::profile::Profile;
use crate::sketch::{
    additive_floor, default_ensemble_size, default_hash_degree, default_sparsity, default_target_dim,
    derive_seed, EnsembleDescriptor, SketchEnsemble, SketchKind,
};

/// Which parameter window of the approximation ratio `c` is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `cbar^2 > 2`, query time about `n^{1/2}`.
    Sqrt,
    /// `cbar^2 > 100`, query time about `n^{0.01}`.
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub regime: Regime,
    pub cbar_sq: f64,
    pub cbar: f64,
}

/// `400 tau / ((1-eps)^2 tau + 2 eps + 399)`.
pub fn poly_upper(tau: f64, eps: f64) -> f64 {
    400.0 * tau / ((1.0 - eps).powi(2) * tau + 2.0 * eps + 399.0)
}

/// `8 tau / ((1-eps)^2 tau + 2 eps + 7)`.
pub fn sqrt_upper(tau: f64, eps: f64) -> f64 {
    8.0 * tau / ((1.0 - eps).powi(2) * tau + 2.0 * eps + 7.0)
}

/// `cbar^2 = c (1 - tau)(1 - eps)^2 / (4 (c - tau))`.
pub fn cbar_squared(c: f64, tau: f64, eps: f64) -> f64 {
    c * (1.0 - tau) * (1.0 - eps).powi(2) / (4.0 * (c - tau))
}

/// Validates `(c, tau, eps)` and picks the tightest admissible regime.
pub fn minip_window(c: f64, tau: f64, eps: f64) -> Result<Window> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("0 < tau < 1 violated (tau = {tau})")));
    }
    if !(eps >= 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("0 <= epsilon < 1 violated (epsilon = {eps})")));
    }
    if !(c > tau) {
        return Err(Error::Config(format!("c > tau violated (c = {c}, tau = {tau})")));
    }
    let regime = if c < poly_upper(tau, eps) {
        Regime::Poly
    } else if c < sqrt_upper(tau, eps) {
        Regime::Sqrt
    } else {
        return Err(Error::Config(format!(
            "c < 8 tau/((1-eps)^2 tau + 2 eps + 7) = {} violated (c = {c})",
            sqrt_upper(tau, eps)
        )));
    };
    let cbar_sq = cbar_squared(c, tau, eps);
    Ok(Window { regime, cbar_sq, cbar: cbar_sq.sqrt() })
}

/// `4 sqrt((c - tau)/(c (1 - tau))) (lambda + alpha)`.
pub fn lambda_tilde(c: f64, tau: f64, lambda: f64, alpha: f64) -> f64 {
    4.0 * ((c - tau) / (c * (1.0 - tau))).sqrt() * (lambda + alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchChoice {
    #[default]
    Srht,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinIpConfig {
    pub c: f64,
    pub tau: f64,
    pub lambda: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub sketch: SketchChoice,
    pub profile: Profile,
    /// Overrides the sketch target dimension.
    pub target_dim: Option<usize>,
    /// Radius-search precision of each furthest-neighbor replica.
    pub afn_delta: f64,
    pub seed: u64,
}

impl MinIpConfig {
    pub fn new(c: f64, tau: f64) -> Self {
        Self {
            c,
            tau,
            lambda: 0.01,
            delta: 0.1,
            epsilon: 0.1,
            sketch: SketchChoice::Srht,
            profile: Profile::Full,
            target_dim: None,
            afn_delta: 0.1,
            seed: 0,
        }
    }
}

/// Derived sizes, recorded for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinIpDescriptor {
    pub config: MinIpConfig,
    pub window: Window,
    pub tensor: bool,
    pub dim: usize,
    pub side: usize,
    pub dx: f64,
    pub n: usize,
    pub ensemble: EnsembleDescriptor,
    pub replicas: usize,
    pub samples: usize,
    pub grid: f64,
    pub alpha: f64,
    pub lambda_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinIpAnswer {
    pub id: usize,
    /// `<x, z>` on the raw vectors.
    pub inner_product: f64,
    /// `<x, z> / (D_X |x|)`, the quantity compared against the threshold.
    pub normalized: f64,
    /// Distinct candidates returned by the replicas.
    pub candidates: usize,
}

/// Min-IP index over raw points of norm at most `D_X`, either flat vectors
/// or rank-one tensors `v v^T` stored by their factor `v`.
#[derive(Debug, Clone)]
pub struct RobustMinIpIndex {
    desc: MinIpDescriptor,
    ensemble: SketchEnsemble,
    structures: Vec<AfnStructure>,
    flat: BTreeMap<usize, Vec<f64>>,
    factors: BTreeMap<usize, Vec<f64>>,
}

fn outer_flat(v: &[f64]) -> Vec<f64> {
    v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()
}

impl RobustMinIpIndex {
    /// Index over rank-one tensors `v v^T`, `v` in `R^side`; queries are flat `side^2` vectors.
    pub fn build_tensor(vectors: &[(usize, Vec<f64>)], side: usize, dx: Option<f64>, cfg: MinIpConfig) -> Result<Self> {
        let dx_data = vectors.iter().map(|(_, v)| dot(v, v)).fold(0.0, f64::max);
        let mut idx = Self::empty(true, side * side, side, dx.unwrap_or(dx_data), vectors.len(), cfg)?;
        for (id, v) in vectors {
            idx.insert_tensor(*id, v.clone())?;
        }
        Ok(idx)
    }

    /// Index over flat vectors in `R^dim`, padded to the next square for sketching.
    pub fn build_flat(points: &[(usize, Vec<f64>)], dim: usize, dx: Option<f64>, cfg: MinIpConfig) -> Result<Self> {
        let dx_data = points.iter().map(|(_, p)| norm(p)).fold(0.0, f64::max);
        let side = (dim as f64).sqrt().ceil() as usize;
        let side = if side * side < dim { side + 1 } else { side };
        let mut idx = Self::empty(false, dim, side, dx.unwrap_or(dx_data), points.len(), cfg)?;
        for (id, p) in points {
            idx.insert_flat(*id, p.clone())?;
        }
        Ok(idx)
    }

    fn empty(tensor: bool, dim: usize, side: usize, dx: f64, n: usize, cfg: MinIpConfig) -> Result<Self> {
        let window = minip_window(cfg.c, cfg.tau, cfg.epsilon)?;
        if !(cfg.lambda > 0.0) {
            return Err(Error::Config(format!("lambda > 0 violated (lambda = {})", cfg.lambda)));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(Error::Config(format!("0 < delta < 1 violated (delta = {})", cfg.delta)));
        }
        if !(dx > 0.0) {
            return Err(Error::EmptyInput("dataset with a nonzero point"));
        }
        let th = cfg.profile.constants();
        let n = n.max(2);
        let b_default =
            ((th.target_dim * default_target_dim(cfg.epsilon.max(1e-3), n, cfg.delta) as f64).ceil() as usize).max(1);
        let b = cfg.target_dim.unwrap_or(b_default).max(1);
        let (kind, b) = match cfg.sketch {
            SketchChoice::Srht => (SketchKind::Srht, b),
            SketchChoice::Sparse => {
                let (s, b) = default_sparsity(cfg.epsilon.max(1e-3), b);
                (SketchKind::Sparse { s }, b)
            }
        };
        let k = ((th.sketches * default_ensemble_size(side * side, n, cfg.delta) as f64).ceil() as usize).max(1);
        let alpha = additive_floor(n, side * side);
        let replicas = ((th.replicas * b as f64 * (n as f64 * b as f64 / (cfg.lambda * cfg.delta)).ln()).ceil()
            as usize)
            .max(1);
        let samples = ((th.samples * (b as f64).log2()).ceil() as usize).clamp(1, k);
        let ensemble = SketchEnsemble::from_descriptor(EnsembleDescriptor {
            kind,
            d: side,
            b,
            k,
            hash_degree: default_hash_degree(cfg.delta),
            master_seed: derive_seed(cfg.seed, 0),
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            alpha,
        })?;
        let params = AfnParams { c1: th.directions, cs: th.copies, delta: cfg.afn_delta };
        let structures = (0..k)
            .map(|i| {
                AfnStructure::build_replicated(
                    &[],
                    b + 2,
                    window.cbar,
                    params,
                    Some(n),
                    replicas,
                    derive_seed(derive_seed(cfg.seed, 1), i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let desc = MinIpDescriptor {
            config: cfg,
            window,
            tensor,
            dim,
            side,
            dx,
            n,
            ensemble: *ensemble.descriptor(),
            replicas,
            samples,
            grid: cfg.lambda / b as f64,
            alpha,
            lambda_tilde: lambda_tilde(cfg.c, cfg.tau, cfg.lambda, alpha),
        };
        Ok(Self { desc, ensemble, structures, flat: BTreeMap::new(), factors: BTreeMap::new() })
    }

    pub fn descriptor(&self) -> &MinIpDescriptor {
        &self.desc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.desc).expect("descriptor is serializable")
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.flat.contains_key(&id)
    }

    /// Success threshold `tau/c + lambda_tilde` on the normalized inner product.
    pub fn threshold(&self) -> f64 {
        self.desc.config.tau / self.desc.config.c + self.desc.lambda_tilde
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out.resize(self.desc.side * self.desc.side, 0.0);
        out
    }

    fn lift(&self, sketched: Vec<f64>, sq_norm: f64) -> Vec<f64> {
        let dx = self.desc.dx;
        let mut p: Vec<f64> = sketched.into_iter().map(|v| v / dx).collect();
        p.push(0.0);
        p.push((1.0 - sq_norm / (dx * dx)).max(0.0).sqrt());
        p
    }

    fn check_new(&self, id: usize, sq_norm: f64) -> Result<()> {
        if self.flat.contains_key(&id) {
            return Err(Error::Config(format!("duplicate point id {id}")));
        }
        let dx = self.desc.dx;
        if sq_norm.sqrt() > dx * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!("|y| = {} exceeds D_X = {dx}", sq_norm.sqrt())));
        }
        Ok(())
    }

    pub fn insert_tensor(&mut self, id: usize, v: Vec<f64>) -> Result<()> {
        if !self.desc.tensor {
            return Err(Error::Config("index was built over flat vectors".into()));
        }
        if v.len() != self.desc.side {
            return Err(Error::DimensionMismatch { expected: self.desc.side, found: v.len() });
        }
        let sq = dot(&v, &v).powi(2);
        self.check_new(id, sq)?;
        for (i, s) in self.ensemble.sketches().iter().enumerate() {
            let p = self.lift(s.apply_pair(&v, &v)?, sq);
            self.structures[i].insert(id, p)?;
        }
        self.flat.insert(id, outer_flat(&v));
        self.factors.insert(id, v);
        Ok(())
    }

    pub fn insert_flat(&mut self, id: usize, y: Vec<f64>) -> Result<()> {
        if self.desc.tensor {
            return Err(Error::Config("index was built over tensors".into()));
        }
        if y.len() != self.desc.dim {
            return Err(Error::DimensionMismatch { expected: self.desc.dim, found: y.len() });
        }
        let sq = dot(&y, &y);
        self.check_new(id, sq)?;
        let padded = self.pad(&y);
        for (i, s) in self.ensemble.sketches().iter().enumerate() {
            let p = self.lift(s.apply_flat(&padded)?, sq);
            self.structures[i].insert(id, p)?;
        }
        self.flat.insert(id, y);
        Ok(())
    }

    pub fn delete(&mut self, id: usize) -> Result<()> {
        if self.flat.remove(&id).is_none() {
            return Err(Error::NotFound(format!("point id {id}")));
        }
        self.factors.remove(&id);
        for s in &mut self.structures {
            s.delete(id)?;
        }
        Ok(())
    }

    /// Best candidate by exact inner product among all replica answers,
    /// with no threshold applied. `None` when every replica fails.
    pub fn query_best(&self, x: &[f64], rng: &mut impl Rng) -> Result<Option<MinIpAnswer>> {
        if x.len() != self.desc.dim {
            return Err(Error::DimensionMismatch { expected: self.desc.dim, found: x.len() });
        }
        if self.flat.is_empty() {
            return Err(Error::EmptyInput("min-ip index"));
        }
        let xn = norm(x);
        if !(xn > 0.0) || !xn.is_finite() {
            return Err(Error::Precondition("query must be finite and nonzero".into()));
        }
        let unit: Vec<f64> = self.pad(x).into_iter().map(|v| v / xn).collect();
        let grid = self.desc.grid;
        let mut seen = BTreeMap::new();
        for i in self.ensemble.sample(self.desc.samples, rng)? {
            let mut q = self.ensemble.sketch(i).apply_flat(&unit)?;
            for v in &mut q {
                *v = (*v / grid).round() * grid;
            }
            q.push(0.0);
            q.push(0.0);
            let afn = &self.structures[i];
            for r in 0..afn.replica_count() {
                if let Some(ans) = afn.query_replica(r, &q)? {
                    seen.entry(ans.id).or_insert_with(|| dot(&self.flat[&ans.id], x));
                }
            }
        }
        let count = seen.len();
        let best = seen.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(best.map(|(id, ip)| MinIpAnswer {
            id,
            inner_product: ip,
            normalized: ip / (self.desc.dx * xn),
            candidates: count,
        }))
    }

    /// Returns a point with normalized inner product at most the threshold, or `None` (Fail).
    pub fn query(&self, x: &[f64], rng: &mut impl Rng) -> Result<Option<MinIpAnswer>> {
        let t = self.threshold();
        Ok(self.query_best(x, rng)?.filter(|a| a.normalized <= t))
    }

    /// Stored flat representation of a point.
    pub fn point(&self, id: usize) -> Option<&[f64]> {
        self.flat.get(&id).map(|v| v.as_slice())
    }
}
