//! Seeded instance generators for tests, fixtures, and benchmarks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{SquareMatrix, VectorFamily};
use crate::rng;

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng::gaussian(&mut r))
}

/// Random `d x d` orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
pub fn random_orthogonal(d: usize, seed: u64) -> SquareMatrix {
    let qr = gaussian_matrix(d, d, seed).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = SquareMatrix::zeros(d);
    for j in 0..d {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            out.set(i, j, q[(i, j)] * s);
        }
    }
    out
}

/// Rows of the orthonormal factor of an `m x d` Gaussian matrix: `sum_i v_i v_i^T = I`.
pub fn random_isotropic(m: usize, d: usize, seed: u64) -> Result<VectorFamily> {
    if m < d || d == 0 {
        return Err(Error::Config(format!("isotropic family needs m >= d >= 1 (m = {m}, d = {d})")));
    }
    let q = gaussian_matrix(m, d, seed).qr().q();
    VectorFamily::from_dense_rows((0..m).map(|i| (0..d).map(|j| q[(i, j)]).collect()).collect())
}

/// Isotropic family of `m = d N` vectors of squared norm `1/N`: a rotated
/// harmonic frame with distinct random frequencies.
pub fn harmonic_frame(d: usize, big_n: usize, seed: u64) -> Result<VectorFamily> {
    if big_n < 2 || d == 0 {
        return Err(Error::Config(format!("harmonic frame needs N >= 2 and d >= 1 (N = {big_n}, d = {d})")));
    }
    let m = d * big_n;
    let pairs = d / 2;
    let available = (m / 2).saturating_sub(1);
    if pairs > available {
        return Err(Error::Config(format!("not enough distinct frequencies for d = {d}, m = {m}")));
    }
    let mut r = rng::stream(seed, 1);
    let mut freqs: Vec<usize> = rand::seq::index::sample(&mut r, available, pairs).into_iter().map(|f| f + 1).collect();
    freqs.sort_unstable();
    let q = random_orthogonal(d, seed);
    let scale = (2.0 / m as f64).sqrt();
    let rows = (0..m)
        .map(|j| {
            let mut v = Vec::with_capacity(d);
            for &f in &freqs {
                let theta = std::f64::consts::TAU * (j * f % m) as f64 / m as f64;
                v.push(scale * theta.cos());
                v.push(scale * theta.sin());
            }
            if d % 2 == 1 {
                v.push((1.0 / m as f64).sqrt());
            }
            q.matvec(&v)
        })
        .collect();
    VectorFamily::from_dense_rows(rows)
}

/// `m x d` family whose first `n` rows are multiples of `e_1`, whitened
/// against uniform weights `pi_i = n/m`; returns the family and `pi`.
pub fn design_instance(m: usize, d: usize, n: usize, seed: u64) -> Result<(VectorFamily, Vec<f64>)> {
    if n > m || d < 2 {
        return Err(Error::Config(format!("design instance needs n <= m and d >= 2 (n = {n}, m = {m}, d = {d})")));
    }
    let mut r = rng::stream(seed, 2);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut v = rng::gaussian_vector(&mut r, d);
            if i < n {
                v[0] = 4.0 + v[0].abs();
                for x in v.iter_mut().skip(1) {
                    *x = 0.0;
                }
            }
            v
        })
        .collect();
    let x = VectorFamily::from_dense_rows(rows)?;
    let pi = vec![n as f64 / m as f64; m];
    Ok((crate::linalg::whiten(&x, &pi)?, pi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{check_isotropy, dot};

    #[test]
    fn isotropic_family() {
        let v = random_isotropic(64, 4, 1).unwrap();
        assert!(check_isotropy(&v, 1e-12));
        assert_eq!(random_isotropic(64, 4, 1).unwrap(), v);
    }

    #[test]
    fn orthogonal() {
        let q = random_orthogonal(5, 3);
        let p = q.transpose().matmul(&q);
        assert!(p.max_abs_diff(&SquareMatrix::identity(5)) < 1e-12);
    }

    #[test]
    fn harmonic_norms_and_isotropy() {
        for (d, n) in [(4, 25), (2, 4), (3, 9), (8, 10)] {
            let v = harmonic_frame(d, n, 7).unwrap();
            assert_eq!(v.len(), d * n);
            assert!(check_isotropy(&v, 1e-10), "d={d} N={n}");
            for i in 0..v.len() {
                let x = v.dense(i);
                assert!((dot(&x, &x) - 1.0 / n as f64).abs() < 1e-12);
            }
        }
        assert!(harmonic_frame(4, 1, 0).is_err());
    }

    #[test]
    fn design_instance_is_whitened() {
        let (x, pi) = design_instance(40, 2, 20, 3).unwrap();
        let g = x.weighted_gram(&pi);
        assert!(g.max_abs_diff(&SquareMatrix::identity(2)) < 1e-10);
    }
}
