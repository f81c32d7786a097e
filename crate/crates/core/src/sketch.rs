//! Johnson-Lindenstrauss sketches for degree-two tensors and a seeded ensemble.
//!
//! Inputs of length `d^2` are read as row-major `d x d` matrices, so
//! `vec(u v^T)[i d + j] = u_i v_j`.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MERSENNE_61: u64 = (1 << 61) - 1;

/// splitmix64 finalizer; a bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for member `i` of a family rooted at `master`. Distinct `i` give distinct seeds.
pub fn derive_seed(master: u64, i: u64) -> u64 {
    mix64(master.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Random polynomial of fixed degree over GF(2^61 - 1): a (degree+1)-wise
/// independent hash family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyHash {
    coeffs: Vec<u64>,
}

fn mulmod(a: u64, b: u64) -> u64 {
    let p = (a as u128) * (b as u128);
    let lo = (p & MERSENNE_61 as u128) as u64;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

impl PolyHash {
    pub fn new(degree: usize, rng: &mut impl RngCore) -> Self {
        let coeffs = (0..=degree).map(|_| rng.gen_range(0..MERSENNE_61)).collect();
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: u64) -> u64 {
        let x = x % MERSENNE_61;
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = mulmod(acc, x) + c;
            if acc >= MERSENNE_61 {
                acc -= MERSENNE_61;
            }
        }
        acc
    }
}

/// `ceil(log(1/delta))`, at least 2.
pub fn default_hash_degree(delta: f64) -> usize {
    ((1.0 / delta).ln().ceil() as usize).max(2)
}

/// `ceil(4 eps^-2 log(m / delta))`.
pub fn default_target_dim(epsilon: f64, m: usize, delta: f64) -> usize {
    ((4.0 / (epsilon * epsilon)) * (m.max(1) as f64 / delta).ln()).ceil().max(1.0) as usize
}

/// Column sparsity `s = ceil(eps b)` and `b` rounded up to a multiple of `s`.
pub fn default_sparsity(epsilon: f64, b: usize) -> (usize, usize) {
    let s = ((epsilon * b as f64).ceil() as usize).clamp(1, b.max(1));
    (s, b.div_ceil(s) * s)
}

/// `ceil((d + log(1/delta)) log(m d))`.
pub fn default_ensemble_size(d: usize, m: usize, delta: f64) -> usize {
    (((d as f64) + (1.0 / delta).ln()) * ((m * d).max(2) as f64).ln()).ceil().max(1.0) as usize
}

/// Theoretical additive floor `(m d)^-9`.
pub fn additive_floor(m: usize, d: usize) -> f64 {
    ((m * d).max(2) as f64).powi(-9)
}

/// Unnormalized in-place Walsh-Hadamard transform; `x.len()` must be a power of two.
pub fn fwht(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (x[j], x[j + h]);
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn hadamard_entry(a: usize, b: usize) -> f64 {
    if (a & b).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `S = (1/sqrt b) P (H D1 x H D2)` with `+-1` Hadamard `H` on the padded side.
#[derive(Debug, Clone)]
pub struct TensorSrhtSketch {
    d: usize,
    padded: usize,
    b: usize,
    d1: Vec<f64>,
    d2: Vec<f64>,
    rows: Vec<(usize, usize)>,
    seed: u64,
}

impl TensorSrhtSketch {
    pub fn new(d: usize, b: usize, seed: u64) -> Result<Self> {
        if d == 0 || b == 0 {
            return Err(Error::Config("sketch dimensions must be positive".into()));
        }
        let padded = d.next_power_of_two();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sign = || if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let d1: Vec<f64> = (0..padded).map(|_| sign()).collect();
        let d2: Vec<f64> = (0..padded).map(|_| sign()).collect();
        let rows = (0..b).map(|_| (rng.gen_range(0..padded), rng.gen_range(0..padded))).collect();
        Ok(Self { d, padded, b, d1, d2, rows, seed })
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn target_dim(&self) -> usize {
        self.b
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn transform_side(&self, u: &[f64], signs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.padded];
        for (i, &ui) in u.iter().enumerate() {
            x[i] = ui * signs[i];
        }
        fwht(&mut x);
        x
    }

    /// `S (u (x) v)` in `O(d log d + b)`.
    pub fn apply_pair(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(u.len(), self.d)?;
        check_len(v.len(), self.d)?;
        let a = self.transform_side(u, &self.d1);
        let c = self.transform_side(v, &self.d2);
        let scale = 1.0 / (self.b as f64).sqrt();
        Ok(self.rows.iter().map(|&(i, j)| a[i] * c[j] * scale).collect())
    }

    /// `S x` for a flat `x` of length `d^2`, via a two-sided Hadamard transform.
    pub fn apply_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.d * self.d)?;
        let p = self.padded;
        let mut y = vec![0.0; p * p];
        for i in 0..self.d {
            for j in 0..self.d {
                y[i * p + j] = x[i * self.d + j] * self.d1[i] * self.d2[j];
            }
        }
        for i in 0..self.d {
            fwht(&mut y[i * p..(i + 1) * p]);
        }
        let mut col = vec![0.0; p];
        for j in 0..p {
            for i in 0..p {
                col[i] = y[i * p + j];
            }
            fwht(&mut col);
            for i in 0..p {
                y[i * p + j] = col[i];
            }
        }
        let scale = 1.0 / (self.b as f64).sqrt();
        Ok(self.rows.iter().map(|&(i, j)| y[i * p + j] * scale).collect())
    }

    /// Explicit `b x d^2` matrix.
    pub fn materialize(&self) -> Vec<Vec<f64>> {
        let scale = 1.0 / (self.b as f64).sqrt();
        self.rows
            .iter()
            .map(|&(ri, rj)| {
                let mut row = vec![0.0; self.d * self.d];
                for i in 0..self.d {
                    for j in 0..self.d {
                        row[i * self.d + j] = scale
                            * hadamard_entry(ri, i)
                            * self.d1[i]
                            * hadamard_entry(rj, j)
                            * self.d2[j];
                    }
                }
                row
            })
            .collect()
    }
}

/// Degree-two tensor sparse embedding: `s` blocks of `b/s` rows, each a
/// CountSketch-style tensor sketch scaled by `1/sqrt s`.
#[derive(Clone)]
pub struct TensorSparseSketch {
    d: usize,
    b: usize,
    s: usize,
    block: usize,
    hash_degree: usize,
    // tables indexed by i * s + k
    h1: Vec<usize>,
    h2: Vec<usize>,
    sigma1: Vec<f64>,
    sigma2: Vec<f64>,
    seed: u64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TensorSparseSketch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TensorSparseSketch")
            .field("d", &self.d)
            .field("b", &self.b)
            .field("s", &self.s)
            .field("hash_degree", &self.hash_degree)
            .field("seed", &self.seed)
            .finish()
    }
}

impl TensorSparseSketch {
    pub fn new(d: usize, b: usize, s: usize, hash_degree: usize, seed: u64) -> Result<Self> {
        if d == 0 || b == 0 || s == 0 {
            return Err(Error::Config("sketch dimensions must be positive".into()));
        }
        if b % s != 0 {
            return Err(Error::Config(format!("target dimension b = {b} is not divisible by s = {s}")));
        }
        let block = b / s;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let polys: Vec<PolyHash> = (0..4).map(|_| PolyHash::new(hash_degree, &mut rng)).collect();
        let keys = d * s;
        let bucket = |p: &PolyHash| -> Vec<usize> {
            (0..keys).map(|key| (p.eval(key as u64) % block as u64) as usize).collect()
        };
        let sign = |p: &PolyHash| -> Vec<f64> {
            (0..keys).map(|key| if p.eval(key as u64) & 1 == 0 { 1.0 } else { -1.0 }).collect()
        };
        let mut planner = FftPlanner::new();
        Ok(Self {
            d,
            b,
            s,
            block,
            hash_degree,
            h1: bucket(&polys[0]),
            h2: bucket(&polys[1]),
            sigma1: sign(&polys[2]),
            sigma2: sign(&polys[3]),
            seed,
            fwd: planner.plan_fft_forward(block),
            inv: planner.plan_fft_inverse(block),
        })
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn target_dim(&self) -> usize {
        self.b
    }

    pub fn sparsity(&self) -> usize {
        self.s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Output row hit by column `(i, j)` in block `k`, and its sign.
    fn cell(&self, i: usize, j: usize, k: usize) -> (usize, f64) {
        let (a, c) = (i * self.s + k, j * self.s + k);
        let r = k * self.block + (self.h1[a] + self.h2[c]) % self.block;
        (r, self.sigma1[a] * self.sigma2[c])
    }

    /// `R (u (x) v)` as `s` circular convolutions of per-block count sketches.
    pub fn apply_pair(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(u.len(), self.d)?;
        check_len(v.len(), self.d)?;
        let nu: Vec<(usize, f64)> = u.iter().copied().enumerate().filter(|e| e.1 != 0.0).collect();
        let nv: Vec<(usize, f64)> = v.iter().copied().enumerate().filter(|e| e.1 != 0.0).collect();
        let mut out = vec![0.0; self.b];
        if nu.is_empty() || nv.is_empty() {
            return Ok(out);
        }
        let n = self.block;
        let scale = 1.0 / ((self.s as f64).sqrt() * n as f64);
        let mut p = vec![Complex::new(0.0, 0.0); n];
        let mut q = vec![Complex::new(0.0, 0.0); n];
        for k in 0..self.s {
            p.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
            q.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
            for &(i, x) in &nu {
                let key = i * self.s + k;
                p[self.h1[key]].re += self.sigma1[key] * x;
            }
            for &(j, x) in &nv {
                let key = j * self.s + k;
                q[self.h2[key]].re += self.sigma2[key] * x;
            }
            self.fwd.process(&mut p);
            self.fwd.process(&mut q);
            for (a, c) in p.iter_mut().zip(&q) {
                *a *= c;
            }
            self.inv.process(&mut p);
            for (r, z) in p.iter().enumerate() {
                out[k * n + r] = z.re * scale;
            }
        }
        Ok(out)
    }

    /// `R x` for a flat `x` of length `d^2` in `O(s nnz(x))`.
    pub fn apply_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.d * self.d)?;
        let mut out = vec![0.0; self.b];
        let scale = 1.0 / (self.s as f64).sqrt();
        for i in 0..self.d {
            for j in 0..self.d {
                let val = x[i * self.d + j];
                if val == 0.0 {
                    continue;
                }
                for k in 0..self.s {
                    let (r, sg) = self.cell(i, j, k);
                    out[r] += sg * val * scale;
                }
            }
        }
        Ok(out)
    }

    /// Explicit `b x d^2` matrix.
    pub fn materialize(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.d * self.d]; self.b];
        let scale = 1.0 / (self.s as f64).sqrt();
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.s {
                    let (r, sg) = self.cell(i, j, k);
                    m[r][i * self.d + j] += sg * scale;
                }
            }
        }
        m
    }
}

/// Which tensor sketch to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SketchKind {
    Srht,
    Sparse { s: usize },
}

/// Replayable parameters of one sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchDescriptor {
    pub kind: SketchKind,
    pub d: usize,
    pub b: usize,
    pub hash_degree: usize,
    pub seed: u64,
}

impl SketchDescriptor {
    pub fn build(&self) -> Result<AnySketch> {
        Ok(match self.kind {
            SketchKind::Srht => AnySketch::Srht(TensorSrhtSketch::new(self.d, self.b, self.seed)?),
            SketchKind::Sparse { s } => AnySketch::Sparse(TensorSparseSketch::new(
                self.d,
                self.b,
                s,
                self.hash_degree,
                self.seed,
            )?),
        })
    }
}

/// Either sketch kind behind one interface.
#[derive(Debug, Clone)]
pub enum AnySketch {
    Srht(TensorSrhtSketch),
    Sparse(TensorSparseSketch),
}

impl AnySketch {
    pub fn side(&self) -> usize {
        match self {
            AnySketch::Srht(s) => s.side(),
            AnySketch::Sparse(s) => s.side(),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            AnySketch::Srht(s) => s.target_dim(),
            AnySketch::Sparse(s) => s.target_dim(),
        }
    }

    pub fn apply_pair(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        match self {
            AnySketch::Srht(s) => s.apply_pair(u, v),
            AnySketch::Sparse(s) => s.apply_pair(u, v),
        }
    }

    pub fn apply_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            AnySketch::Srht(s) => s.apply_flat(x),
            AnySketch::Sparse(s) => s.apply_flat(x),
        }
    }

    pub fn materialize(&self) -> Vec<Vec<f64>> {
        match self {
            AnySketch::Srht(s) => s.materialize(),
            AnySketch::Sparse(s) => s.materialize(),
        }
    }
}

/// Replayable parameters of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    pub kind: SketchKind,
    pub d: usize,
    pub b: usize,
    pub k: usize,
    pub hash_degree: usize,
    pub master_seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// Additive distortion floor.
    pub alpha: f64,
}

/// `k` independent sketches with seeds derived from one master seed.
#[derive(Debug, Clone)]
pub struct SketchEnsemble {
    descriptor: EnsembleDescriptor,
    sketches: Vec<AnySketch>,
}

impl SketchEnsemble {
    /// Builds with `epsilon = 0.5`, `delta = 0.01` recorded and `alpha = 0`.
    pub fn build(kind: SketchKind, d: usize, b: usize, k: usize, master_seed: u64) -> Result<Self> {
        Self::from_descriptor(EnsembleDescriptor {
            kind,
            d,
            b,
            k,
            hash_degree: default_hash_degree(0.01),
            master_seed,
            epsilon: 0.5,
            delta: 0.01,
            alpha: 0.0,
        })
    }

    pub fn from_descriptor(desc: EnsembleDescriptor) -> Result<Self> {
        if desc.k == 0 {
            return Err(Error::Config("ensemble size k must be at least 1".into()));
        }
        let sketches = (0..desc.k)
            .map(|i| {
                SketchDescriptor {
                    kind: desc.kind,
                    d: desc.d,
                    b: desc.b,
                    hash_degree: desc.hash_degree,
                    seed: derive_seed(desc.master_seed, i as u64),
                }
                .build()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { descriptor: desc, sketches })
    }

    pub fn descriptor(&self) -> &EnsembleDescriptor {
        &self.descriptor
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.descriptor).expect("descriptor is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let desc: EnsembleDescriptor =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("bad ensemble descriptor: {e}")))?;
        Self::from_descriptor(desc)
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    pub fn sketch(&self, i: usize) -> &AnySketch {
        &self.sketches[i]
    }

    pub fn sketches(&self) -> &[AnySketch] {
        &self.sketches
    }

    pub fn seed_of(&self, i: usize) -> u64 {
        derive_seed(self.descriptor.master_seed, i as u64)
    }

    /// `count` distinct member indices, uniform without replacement.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if count == 0 || count > self.len() {
            return Err(Error::Config(format!(
                "sample count {count} must lie in [1, {}]",
                self.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.len(), count).into_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn outer_flat(u: &[f64], v: &[f64]) -> Vec<f64> {
        u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()
    }

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        e
    }

    fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn frob(m: &[Vec<f64>]) -> f64 {
        m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn fwht_matches_hadamard_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = x.clone();
        fwht(&mut y);
        for (i, yi) in y.iter().enumerate() {
            let direct: f64 = (0..8).map(|j| hadamard_entry(i, j) * x[j]).sum();
            assert!((yi - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn poly_hash_is_deterministic_and_in_field() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = PolyHash::new(4, &mut r1);
        let b = PolyHash::new(4, &mut r2);
        assert_eq!(a, b);
        for x in 0..100 {
            assert!(a.eval(x) < MERSENNE_61);
        }
        // Horner against u128 direct evaluation
        let x = 123_456_789u64;
        let mut direct: u128 = 0;
        let mut pw: u128 = 1;
        for &c in &a.coeffs {
            direct = (direct + c as u128 * pw) % MERSENNE_61 as u128;
            pw = pw * x as u128 % MERSENNE_61 as u128;
        }
        assert_eq!(a.eval(x) as u128, direct);
    }

    #[test]
    fn derived_seeds_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn srht_zero_and_pair_oracle() {
        let s = TensorSrhtSketch::new(4, 8, 7).unwrap();
        assert!(s.apply_pair(&[0.0; 4], &[0.0; 4]).unwrap().iter().all(|x| *x == 0.0));
        let m = s.materialize();
        let (u, v) = (unit(4, 0), unit(4, 1));
        assert!(close(&s.apply_pair(&u, &v).unwrap(), &matvec(&m, &outer_flat(&u, &v)), 1e-9));
    }

    #[test]
    fn srht_flat_consistency() {
        let s = TensorSrhtSketch::new(5, 16, 3).unwrap();
        let e = unit(5, 0);
        assert!(close(
            &s.apply_flat(&outer_flat(&e, &e)).unwrap(),
            &s.apply_pair(&e, &e).unwrap(),
            1e-12
        ));
        assert!(s.apply_flat(&[0.0; 25]).unwrap().iter().all(|x| *x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(close(&s.apply_flat(&x).unwrap(), &matvec(&s.materialize(), &x), 1e-9));
        assert!(s.apply_flat(&[0.0; 24]).is_err());
    }

    #[test]
    fn srht_frobenius_bound() {
        for d in [3, 4, 7, 8] {
            let s = TensorSrhtSketch::new(d, 20, d as u64).unwrap();
            assert!(frob(&s.materialize()) <= d as f64 + 1e-9);
        }
    }

    #[test]
    fn srht_monte_carlo_jl() {
        let s = TensorSrhtSketch::new(16, 256, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut good = 0;
        for _ in 0..1000 {
            let u = random_unit(16, &mut rng);
            let v = random_unit(16, &mut rng);
            let y = s.apply_pair(&u, &v).unwrap();
            let n2: f64 = y.iter().map(|x| x * x).sum();
            if (n2 - 1.0).abs() <= 0.5 {
                good += 1;
            }
        }
        assert!(good >= 990, "good = {good}");
    }

    #[test]
    fn sparse_zero_and_pair_oracle() {
        let r = TensorSparseSketch::new(4, 8, 2, 4, 3).unwrap();
        assert!(r.apply_pair(&[0.0; 4], &[0.0; 4]).unwrap().iter().all(|x| *x == 0.0));
        let e = unit(4, 0);
        assert!(close(&r.apply_pair(&e, &e).unwrap(), &matvec(&r.materialize(), &outer_flat(&e, &e)), 1e-9));
        assert!(TensorSparseSketch::new(4, 9, 2, 4, 3).is_err());
    }

    #[test]
    fn sparse_flat_consistency() {
        let r = TensorSparseSketch::new(6, 24, 4, 4, 11).unwrap();
        let (e1, e2) = (unit(6, 0), unit(6, 1));
        assert!(close(
            &r.apply_flat(&outer_flat(&e1, &e2)).unwrap(),
            &r.apply_pair(&e1, &e2).unwrap(),
            1e-12
        ));
        assert!(r.apply_flat(&[0.0; 36]).unwrap().iter().all(|x| *x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(close(&r.apply_flat(&x).unwrap(), &matvec(&r.materialize(), &x), 1e-9));
    }

    #[test]
    fn sparse_column_structure_and_norm() {
        let r = TensorSparseSketch::new(5, 30, 5, 4, 21).unwrap();
        let m = r.materialize();
        let block = 30 / 5;
        for c in 0..25 {
            let nz: Vec<usize> = (0..30).filter(|&row| m[row][c] != 0.0).collect();
            assert_eq!(nz.len(), 5);
            for (k, row) in nz.iter().enumerate() {
                assert_eq!(row / block, k);
                assert!((m[*row][c].abs() - 1.0 / 5f64.sqrt()).abs() < 1e-15);
            }
        }
        assert!((frob(&m) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_monte_carlo_jl() {
        let r = TensorSparseSketch::new(16, 512, 32, 5, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut bad = 0;
        for _ in 0..1000 {
            let u = random_unit(16, &mut rng);
            let y = r.apply_pair(&u, &u).unwrap();
            let n2: f64 = y.iter().map(|x| x * x).sum();
            if (n2 - 1.0).abs() > 0.5 {
                bad += 1;
            }
        }
        assert!(bad <= 50, "bad = {bad}");
    }

    #[test]
    fn ensemble_single_member_and_determinism() {
        let e = SketchEnsemble::build(SketchKind::Srht, 4, 8, 1, 9).unwrap();
        let s = SketchDescriptor { kind: SketchKind::Srht, d: 4, b: 8, hash_degree: e.descriptor().hash_degree, seed: e.seed_of(0) }
            .build()
            .unwrap();
        let u = [0.5, -0.5, 0.5, 0.5];
        assert_eq!(e.sketch(0).apply_pair(&u, &u).unwrap(), s.apply_pair(&u, &u).unwrap());
        let e2 = SketchEnsemble::from_json(&e.to_json()).unwrap();
        let f = SketchEnsemble::build(SketchKind::Sparse { s: 2 }, 4, 8, 5, 9).unwrap();
        let f2 = SketchEnsemble::build(SketchKind::Sparse { s: 2 }, 4, 8, 5, 9).unwrap();
        for i in 0..5 {
            assert_eq!(f.sketch(i).apply_pair(&u, &u).unwrap(), f2.sketch(i).apply_pair(&u, &u).unwrap());
        }
        assert_eq!(e2.sketch(0).apply_pair(&u, &u).unwrap(), s.apply_pair(&u, &u).unwrap());
    }

    #[test]
    fn ensemble_sampling() {
        let e = SketchEnsemble::build(SketchKind::Srht, 4, 8, 10, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut all = e.sample(10, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let a = e.sample(1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = e.sample(1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(e.sample(11, &mut rng).is_err());
        assert!(e.sample(0, &mut rng).is_err());
    }

    #[test]
    fn ensemble_sampling_uniform() {
        let e = SketchEnsemble::build(SketchKind::Srht, 2, 2, 20, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let count = 3;
        let mut freq = vec![0usize; 20];
        for _ in 0..draws {
            for i in e.sample(count, &mut rng).unwrap() {
                freq[i] += 1;
            }
        }
        let p = count as f64 / 20.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let chi2: f64 = freq.iter().map(|&f| (f as f64 - mean).powi(2) / mean).sum();
        for &f in &freq {
            assert!((f as f64 - mean).abs() <= 3.0 * sigma + 1.0, "freq {f} vs {mean}");
        }
        // 19 degrees of freedom, 0.999 quantile ~ 43.8
        assert!(chi2 < 43.8, "chi2 = {chi2}");
    }

    #[test]
    fn defaults() {
        assert_eq!(default_target_dim(0.5, 100, 0.01), (16.0 * (10_000f64).ln()).ceil() as usize);
        let (s, b) = default_sparsity(0.5, 101);
        assert_eq!(s, 51);
        assert_eq!(b % s, 0);
        assert!(b >= 101);
        assert_eq!(default_ensemble_size(8, 100, 0.01), ((8.0 + 100f64.ln()) * 800f64.ln()).ceil() as usize);
        assert!(additive_floor(100, 8) <= 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn pair_equals_flat(seed in 0u64..10_000, d in 1usize..9) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let flat = outer_flat(&u, &v);
                let s = TensorSrhtSketch::new(d, 12, seed).unwrap();
                prop_assert!(close(&s.apply_pair(&u, &v).unwrap(), &s.apply_flat(&flat).unwrap(), 1e-9));
                let r = TensorSparseSketch::new(d, 12, 3, 3, seed).unwrap();
                prop_assert!(close(&r.apply_pair(&u, &v).unwrap(), &r.apply_flat(&flat).unwrap(), 1e-9));
            }
        }
    }
}
