//! Adaptive inner-product estimation through a distance estimator built from
//! many small Gaussian sketches with median aggregation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::afn::{transform_point, transform_query, Point};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::profile::Profile;
use crate::rng;
use crate::sketch::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AipeConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub profile: Profile,
    /// Initial dataset radius; grown automatically if a point exceeds it.
    pub radius: Option<f64>,
    /// Overrides the sketch count multiplier of the profile.
    pub sketch_constant: Option<f64>,
    pub seed: u64,
}

impl AipeConfig {
    pub fn new(epsilon: f64, delta: f64, seed: u64) -> Self {
        Self { epsilon, delta, profile: Profile::Full, radius: None, sketch_constant: None, seed }
    }
}

/// Estimate for one stored point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub id: usize,
    /// Median sketched distance between the transformed point and query.
    pub distance: f64,
    /// `1 - distance^2 / 2`.
    pub w: f64,
    /// `D |q| w`, the inner product estimate.
    pub inner_product: f64,
}

#[derive(Debug, Clone)]
struct Stored {
    x: Vec<f64>,
    /// One sketched transformed point per sketch.
    sketched: Vec<Vec<f64>>,
}

/// Distance estimator over the unit-sphere transform of the stored points.
///
/// Each point `x` is stored as `phi(x) = (x/D, 0, sqrt(1 - |x|^2/D^2))` where
/// `D` is the dataset radius; an insert that grows `D` re-sketches every point.
#[derive(Debug, Clone)]
pub struct DistanceEstimator {
    dim: usize,
    epsilon: f64,
    delta: f64,
    rows: usize,
    samples: usize,
    sketches: Vec<Vec<Vec<f64>>>,
    points: BTreeMap<usize, Stored>,
    radius: f64,
    seed: u64,
}

/// `ceil(c2 (s_dim + log 1/delta) log m)`, at least 1.
pub fn estimator_sketch_count(c2: f64, s_dim: usize, m: usize, delta: f64) -> usize {
    ((c2 * (s_dim as f64 + (1.0 / delta).ln()) * (m.max(2) as f64).ln()).ceil() as usize).max(1)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl DistanceEstimator {
    pub fn build(points: &[(usize, Vec<f64>)], dim: usize, cfg: AipeConfig) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("distance estimator needs m >= 1"));
        }
        if !(cfg.epsilon > 0.0) || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(Error::Config(format!(
                "epsilon > 0 and 0 < delta < 1 violated (epsilon = {}, delta = {})",
                cfg.epsilon, cfg.delta
            )));
        }
        let s_dim = dim + 2;
        let c2 = cfg.sketch_constant.unwrap_or(cfg.profile.constants().estimator_sketches);
        let k = estimator_sketch_count(c2, s_dim, points.len(), cfg.delta);
        let rows = (8.0 / (cfg.epsilon * cfg.epsilon)).ceil() as usize;
        let scale = 1.0 / (rows as f64).sqrt();
        let sketches = (0..k)
            .map(|i| {
                let mut r = rng::stream(derive_seed(cfg.seed, i as u64), 0);
                (0..rows)
                    .map(|_| rng::gaussian_vector(&mut r, s_dim).into_iter().map(|g| g * scale).collect())
                    .collect()
            })
            .collect();
        let samples = ((3.0 * (k as f64).ln()).ceil() as usize).clamp(1, k);
        let mut est = Self {
            dim,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            rows,
            samples,
            sketches,
            points: BTreeMap::new(),
            radius: cfg.radius.unwrap_or(0.0).max(points.iter().map(|p| norm(&p.1)).fold(0.0, f64::max)),
            seed: cfg.seed,
        };
        for (id, x) in points {
            est.insert(*id, x)?;
        }
        Ok(est)
    }

    pub fn sketch_count(&self) -> usize {
        self.sketches.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Largest norm ever inserted; not shrunk on delete.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.keys().copied()
    }

    fn project(sketch: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
        sketch.iter().map(|row| dot(row, p)).collect()
    }

    fn sketch_point(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let phi: Point = if self.radius > 0.0 {
            transform_point(x, self.radius).expect("radius covers every stored point").into()
        } else {
            let mut p = vec![0.0; self.dim + 2];
            p[self.dim + 1] = 1.0;
            p.into()
        };
        self.sketches.iter().map(|s| Self::project(s, &phi)).collect()
    }

    pub fn insert(&mut self, id: usize, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if self.points.contains_key(&id) {
            return Err(Error::Config(format!("duplicate point id {id}")));
        }
        let r = norm(x);
        if r > self.radius {
            self.radius = r;
            let ids: Vec<usize> = self.points.keys().copied().collect();
            for i in ids {
                let sk = self.sketch_point(&self.points[&i].x);
                self.points.get_mut(&i).expect("listed id").sketched = sk;
            }
        }
        let sketched = self.sketch_point(x);
        self.points.insert(id, Stored { x: x.to_vec(), sketched });
        Ok(())
    }

    pub fn delete(&mut self, id: usize) -> Result<()> {
        self.points.remove(&id).map(|_| ()).ok_or_else(|| Error::NotFound(format!("point id {id}")))
    }

    /// Estimates for every stored point, in id order.
    pub fn query_all(&self, q: &[f64], rng: &mut impl Rng) -> Result<Vec<Estimate>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: q.len() });
        }
        let qn = norm(q);
        let psi = transform_query(q)?;
        let chosen = rand::seq::index::sample(rng, self.sketches.len(), self.samples).into_vec();
        let sq: Vec<Vec<f64>> = chosen.iter().map(|&i| Self::project(&self.sketches[i], &psi)).collect();
        let mut buf = vec![0.0; chosen.len()];
        Ok(self
            .points
            .iter()
            .map(|(&id, st)| {
                for (slot, (&i, qs)) in buf.iter_mut().zip(chosen.iter().zip(&sq)) {
                    *slot = crate::afn::distance(&st.sketched[i], qs);
                }
                let d = median(&mut buf);
                let w = 1.0 - d * d / 2.0;
                Estimate { id, distance: d, w, inner_product: self.radius * qn * w }
            })
            .collect())
    }

    /// Id with the largest estimated distance, ties to the smallest id.
    pub fn query_min(&self, q: &[f64], rng: &mut impl Rng) -> Result<usize> {
        let all = self.query_all(q, rng)?;
        let mut best: Option<&Estimate> = None;
        for e in &all {
            if best.map_or(true, |b| e.distance > b.distance) {
                best = Some(e);
            }
        }
        best.map(|e| e.id).ok_or(Error::EmptyInput("distance estimator"))
    }
}

/// Estimator accuracy `eps` that realizes the `(c, tau)` Min-IP guarantee:
/// `(1 + eps)^2 = c (1 - tau) / (c - tau)`.
pub fn epsilon_for_window(c: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("0 < tau < 1 violated (tau = {tau})")));
    }
    if !(c > tau) {
        return Err(Error::Config(format!("c > tau violated (c = {c}, tau = {tau})")));
    }
    let upper = 1.01 * tau / (0.01 + tau);
    if !(c < upper) {
        return Err(Error::Config(format!("c < 1.01 tau/(0.01 + tau) = {upper} violated (c = {c})")));
    }
    Ok((c * (1.0 - tau) / (c - tau)).sqrt() - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afn::{distance, exact_furthest};

    fn cfg(eps: f64, seed: u64) -> AipeConfig {
        AipeConfig::new(eps, 0.1, seed)
    }

    #[test]
    fn single_point_relative_error() {
        let x = vec![0.3, -0.4, 0.5];
        let est = DistanceEstimator::build(&[(0, x.clone())], 3, cfg(0.2, 1)).unwrap();
        let mut r = rng::stream(2, 0);
        let phi = transform_point(&x, est.radius()).unwrap();
        for _ in 0..100 {
            let q = rng::gaussian_vector(&mut r, 3);
            let truth = distance(&phi, &transform_query(&q).unwrap());
            let e = est.query_all(&q, &mut r).unwrap()[0];
            assert!(e.distance >= (1.0 - 0.2) * truth && e.distance <= (1.0 + 0.2) * truth, "{} vs {truth}", e.distance);
        }
    }

    #[test]
    fn orthogonal_pair_is_small() {
        let est = DistanceEstimator::build(&[(0, vec![1.0, 0.0])], 2, cfg(0.1, 3)).unwrap();
        let e = est.query_all(&[0.0, 1.0], &mut rng::stream(0, 0)).unwrap()[0];
        assert!(e.inner_product.abs() <= 0.3);
    }

    #[test]
    fn equal_point_gives_w_near_one() {
        let est = DistanceEstimator::build(&[(0, vec![0.6, 0.8])], 2, cfg(0.1, 4)).unwrap();
        let e = est.query_all(&[0.6, 0.8], &mut rng::stream(0, 0)).unwrap()[0];
        assert!(e.w <= 1.0 && e.w >= 1.0 - 6.0 * 0.1);
    }

    #[test]
    fn sandwich_on_random_set() {
        let eps = 0.1;
        let mut r = rng::stream(6, 0);
        let pts: Vec<(usize, Vec<f64>)> = (0..50).map(|i| (i, rng::gaussian_vector(&mut r, 6))).collect();
        let est = DistanceEstimator::build(&pts, 6, cfg(eps, 7)).unwrap();
        let d = est.radius();
        for _ in 0..20 {
            let q = rng::unit_vector(&mut r, 6);
            for e in est.query_all(&q, &mut r).unwrap() {
                let ip = dot(&pts[e.id].1, &q);
                let lo = (1.0 + 3.0 * eps) * ip - 3.0 * d * eps;
                let hi = (1.0 - 3.0 * eps) * ip + 3.0 * d * eps;
                assert!(e.inner_product >= lo && e.inner_product <= hi, "{} not in [{lo}, {hi}]", e.inner_product);
            }
        }
    }

    #[test]
    fn query_min_separates_far_point() {
        let pts = vec![(0, vec![1.0, 0.0]), (1, vec![-1.0, 0.0])];
        let est = DistanceEstimator::build(&pts, 2, cfg(0.1, 8)).unwrap();
        assert_eq!(est.query_min(&[1.0, 0.0], &mut rng::stream(1, 0)).unwrap(), 1);
    }

    #[test]
    fn query_min_is_internal_argmax_and_near_furthest() {
        let eps = 0.1;
        let mut r = rng::stream(12, 0);
        let pts: Vec<(usize, Vec<f64>)> = (0..100).map(|i| (i, rng::unit_vector(&mut r, 5))).collect();
        let est = DistanceEstimator::build(&pts, 5, cfg(eps, 13)).unwrap();
        let transformed: Vec<Vec<f64>> = pts.iter().map(|p| transform_point(&p.1, 1.0).unwrap()).collect();
        for s in 0..50u64 {
            let q = rng::unit_vector(&mut r, 5);
            let id = est.query_min(&q, &mut rng::stream(s, 1)).unwrap();
            let all = est.query_all(&q, &mut rng::stream(s, 1)).unwrap();
            let top = all.iter().map(|e| e.distance).fold(f64::MIN, f64::max);
            let first = all.iter().find(|e| e.distance == top).unwrap().id;
            assert_eq!(id, first);
            let tq = transform_query(&q).unwrap();
            let (_, far) = exact_furthest(&transformed, &tq).unwrap();
            assert!(distance(&transformed[id], &tq) >= far / (1.0 + 2.0 * eps));
        }
    }

    #[test]
    fn insert_delete_restores_outputs() {
        let mut r = rng::stream(20, 0);
        let pts: Vec<(usize, Vec<f64>)> = (0..10).map(|i| (i, rng::gaussian_vector(&mut r, 4))).collect();
        let mut est = DistanceEstimator::build(&pts, 4, cfg(0.2, 21)).unwrap();
        let q = rng::gaussian_vector(&mut r, 4);
        let before = est.query_all(&q, &mut rng::stream(1, 0)).unwrap();
        est.insert(50, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        est.delete(50).unwrap();
        assert_eq!(est.query_all(&q, &mut rng::stream(1, 0)).unwrap(), before);
        assert!(est.delete(50).is_err());
        let r0 = est.radius();
        est.insert(51, &[10.0, 0.0, 0.0, 0.0]).unwrap();
        est.delete(51).unwrap();
        assert_eq!(est.radius(), 10.0f64.max(r0));
    }

    #[test]
    fn duplicates_tie_to_smallest_id() {
        let pts = vec![(4, vec![-1.0, 0.0]), (2, vec![-1.0, 0.0]), (3, vec![1.0, 0.0])];
        let est = DistanceEstimator::build(&pts, 2, cfg(0.1, 9)).unwrap();
        assert_eq!(est.query_min(&[1.0, 0.0], &mut rng::stream(0, 0)).unwrap(), 2);
    }

    #[test]
    fn window_epsilon() {
        let eps = epsilon_for_window(1.21 * 0.5 / 0.71, 0.5).unwrap();
        assert!((eps - 0.1).abs() < 1e-12);
        assert!(epsilon_for_window(0.5, 0.5).is_err());
        assert!(epsilon_for_window(0.995, 0.5).is_err());
        // induced c from eps: (1+eps)^2 tau / ((1+eps)^2 - 1 + tau)
        let (e, tau) = (0.2f64, 0.3);
        let c = (1.0 + e).powi(2) * tau / ((1.0 + e).powi(2) - 1.0 + tau);
        assert!((epsilon_for_window(c, tau).unwrap() - e).abs() < 1e-12);
    }
}
