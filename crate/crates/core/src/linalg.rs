//! Dense kernels and barrier potentials.
//!
//! Every matrix function goes through a single symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = x;
        }
        m
    }

    /// Builds from a row-major buffer of length `dim * dim`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    /// `sum_k w_k * col_k col_k^T` for the columns of `vectors`.
    fn from_spectral(values: &[f64], vectors: &SquareMatrix) -> Self {
        let d = values.len();
        let mut out = Self::zeros(d);
        for (k, &w) in values.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for i in 0..d {
                let vi = vectors.get(i, k) * w;
                if vi == 0.0 {
                    continue;
                }
                let row = &mut out.data[i * d..(i + 1) * d];
                for (j, r) in row.iter_mut().enumerate() {
                    *r += vi * vectors.get(j, k);
                }
            }
        }
        out.symmetrize();
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.dim + j] = x;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Frobenius inner product `<A, B> = tr(A^T B)`.
    pub fn inner(&self, other: &SquareMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.data[i * d + j];
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim;
        for i in 0..d {
            for j in i + 1..d {
                let a = self.get(i, j);
                let b = self.get(j, i);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in i + 1..d {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &SquareMatrix) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SquareMatrix) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &SquareMatrix, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    /// `A += w * v v^T`.
    pub fn add_outer(&mut self, v: &[f64], w: f64) {
        let d = self.dim;
        for i in 0..d {
            let vi = w * v[i];
            if vi == 0.0 {
                continue;
            }
            for j in 0..d {
                self.data[i * d + j] += vi * v[j];
            }
        }
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Symmetric eigendecomposition with ascending eigenvalues.
    pub fn eigen(&self) -> Result<EigenDecomposition> {
        if !self.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        let d = self.dim;
        if d == 0 {
            return Ok(EigenDecomposition { values: vec![], vectors: SquareMatrix::zeros(0) });
        }
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)));
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = SquareMatrix::zeros(d);
        for (col, &k) in order.iter().enumerate() {
            for i in 0..d {
                vectors.set(i, col, eig.eigenvectors[(i, k)]);
            }
        }
        Ok(EigenDecomposition { values, vectors })
    }
}

/// Eigenvalues ascending; eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
}

impl EigenDecomposition {
    pub fn lambda_min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `Q f(Lambda) Q^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SquareMatrix {
        let w: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        SquareMatrix::from_spectral(&w, &self.vectors)
    }

    pub fn reconstruct(&self) -> SquareMatrix {
        self.map(|l| l)
    }

    /// Eigenvector for the smallest eigenvalue.
    pub fn min_vector(&self) -> Vec<f64> {
        let d = self.values.len();
        (0..d).map(|i| self.vectors.get(i, 0)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One member of a [`VectorFamily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FamilyVector {
    Dense(Vec<f64>),
    /// Sorted coordinate list.
    Sparse { indices: Vec<usize>, values: Vec<f64> },
}

impl FamilyVector {
    pub fn nnz(&self) -> usize {
        match self {
            FamilyVector::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            FamilyVector::Sparse { values, .. } => values.iter().filter(|x| **x != 0.0).count(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        match self {
            FamilyVector::Dense(v) => v.clone(),
            FamilyVector::Sparse { indices, values } => {
                let mut out = vec![0.0; dim];
                for (&i, &x) in indices.iter().zip(values) {
                    out[i] = x;
                }
                out
            }
        }
    }

    /// Nonzero coordinates as `(index, value)` pairs.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        match self {
            FamilyVector::Dense(v) => {
                v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, &x)| (i, x)).collect()
            }
            FamilyVector::Sparse { indices, values } => indices
                .iter()
                .zip(values)
                .filter(|(_, x)| **x != 0.0)
                .map(|(&i, &x)| (i, x))
                .collect(),
        }
    }

    /// `v^T M v`, touching only stored nonzeros.
    pub fn quad(&self, m: &SquareMatrix) -> f64 {
        match self {
            FamilyVector::Dense(v) => dense_quad(v, m),
            FamilyVector::Sparse { indices, values } => {
                let mut s = 0.0;
                for (a, &i) in indices.iter().enumerate() {
                    let row = m.row(i);
                    let mut t = 0.0;
                    for (b, &j) in indices.iter().enumerate() {
                        t += row[j] * values[b];
                    }
                    s += values[a] * t;
                }
                s
            }
        }
    }
}

fn dense_quad(v: &[f64], m: &SquareMatrix) -> f64 {
    let d = m.dim();
    let mut s = 0.0;
    for i in 0..d {
        if v[i] == 0.0 {
            continue;
        }
        s += v[i] * dot(m.row(i), v);
    }
    s
}

/// `m` vectors in `R^d`, each stored dense or sparse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFamily {
    dim: usize,
    vectors: Vec<FamilyVector>,
}

impl VectorFamily {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: Vec::new() }
    }

    pub fn from_dense_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(Error::EmptyInput("vector family"))?;
        let mut fam = Self::new(dim);
        for r in rows {
            fam.push_dense(r)?;
        }
        Ok(fam)
    }

    pub fn push_dense(&mut self, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        self.vectors.push(FamilyVector::Dense(v));
        Ok(())
    }

    /// Pushes a sparse vector; duplicate coordinates are summed.
    pub fn push_sparse(&mut self, mut entries: Vec<(usize, f64)>) -> Result<()> {
        entries.sort_by_key(|e| e.0);
        let mut indices: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (i, x) in entries {
            if i >= self.dim {
                return Err(Error::IndexOutOfRange { index: i, len: self.dim });
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("vector"));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += x;
            } else {
                indices.push(i);
                values.push(x);
            }
        }
        self.vectors.push(FamilyVector::Sparse { indices, values });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, i: usize) -> &FamilyVector {
        &self.vectors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FamilyVector> {
        self.vectors.iter()
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        self.vectors[i].to_dense(self.dim)
    }

    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.dense(i)).collect()
    }

    pub fn nnz(&self, i: usize) -> usize {
        self.vectors[i].nnz()
    }

    /// `sum_i nnz(v_i)^2`, the stored size of all outer products.
    pub fn outer_nnz(&self) -> usize {
        self.vectors.iter().map(|v| v.nnz() * v.nnz()).sum()
    }

    /// `sum_i w_i v_i v_i^T`.
    pub fn weighted_gram(&self, weights: &[f64]) -> SquareMatrix {
        let d = self.dim;
        let mut g = SquareMatrix::zeros(d);
        for (v, &w) in self.vectors.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let e = v.entries();
            for &(i, a) in &e {
                for &(j, b) in &e {
                    g.data[i * d + j] += w * a * b;
                }
            }
        }
        g
    }

    pub fn gram(&self) -> SquareMatrix {
        self.weighted_gram(&vec![1.0; self.len()])
    }
}

/// Indices with strictly positive weights, sorted by index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedSelection {
    entries: Vec<(usize, f64)>,
}

impl WeightedSelection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `w` to the weight of `index`.
    pub fn add(&mut self, index: usize, w: f64) {
        match self.entries.binary_search_by_key(&index, |e| e.0) {
            Ok(pos) => self.entries[pos].1 += w,
            Err(pos) => self.entries.insert(pos, (index, w)),
        }
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        let mut s = Self::new();
        for &i in indices {
            s.add(i, 1.0);
        }
        s
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn support(&self) -> usize {
        self.entries.iter().filter(|e| e.1 != 0.0).count()
    }

    /// Dense weight vector of length `m`.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        let mut w = vec![0.0; m];
        for &(i, x) in &self.entries {
            if i < m {
                w[i] += x;
            }
        }
        w
    }
}

fn check_square(a: &SquareMatrix, expected: usize) -> Result<()> {
    if a.dim() != expected {
        return Err(Error::DimensionMismatch { expected, found: a.dim() });
    }
    Ok(())
}

/// `v^T M v`.
pub fn quadratic_form(v: &[f64], m: &SquareMatrix) -> Result<f64> {
    check_square(m, v.len())?;
    Ok(dense_quad(v, m))
}

fn barrier_margin(a: &SquareMatrix) -> f64 {
    1e-12 * a.frobenius_norm().max(1.0)
}

/// `Phi^u(A) = tr (uI - A)^{-1}`.
pub fn barrier_upper(a: &SquareMatrix, u: f64) -> Result<f64> {
    let eig = a.eigen()?;
    check_upper(&eig, u, barrier_margin(a))?;
    Ok(upper_potential(&eig.values, u))
}

/// `Phi_l(A) = tr (A - lI)^{-1}`.
pub fn barrier_lower(a: &SquareMatrix, ell: f64) -> Result<f64> {
    let eig = a.eigen()?;
    check_lower(&eig, ell, barrier_margin(a))?;
    Ok(lower_potential(&eig.values, ell))
}

pub(crate) fn check_upper(eig: &EigenDecomposition, u: f64, margin: f64) -> Result<()> {
    let top = eig.lambda_max();
    if u <= top + margin {
        return Err(Error::BarrierViolation { barrier: u, eigenvalue: top });
    }
    Ok(())
}

pub(crate) fn check_lower(eig: &EigenDecomposition, ell: f64, margin: f64) -> Result<()> {
    let bottom = eig.lambda_min();
    if ell >= bottom - margin {
        return Err(Error::BarrierViolation { barrier: ell, eigenvalue: bottom });
    }
    Ok(())
}

pub(crate) fn upper_potential(values: &[f64], u: f64) -> f64 {
    values.iter().map(|l| 1.0 / (u - l)).sum()
}

pub(crate) fn lower_potential(values: &[f64], ell: f64) -> f64 {
    values.iter().map(|l| 1.0 / (l - ell)).sum()
}

/// Which side of the spectrum a barrier sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierSide {
    /// `(uI - A)^{-p}`
    Upper,
    /// `(A - lI)^{-p}`
    Lower,
}

/// `(uI - A)^{-p}` or `(A - lI)^{-p}` for `p` in {1, 2}.
pub fn shifted_inverse_power(
    a: &SquareMatrix,
    shift: f64,
    side: BarrierSide,
    power: u32,
) -> Result<SquareMatrix> {
    if power != 1 && power != 2 {
        return Err(Error::Config(format!("power must be 1 or 2, got {power}")));
    }
    let eig = a.eigen()?;
    let margin = barrier_margin(a);
    let p = power as i32;
    match side {
        BarrierSide::Upper => {
            check_upper(&eig, shift, margin)?;
            Ok(eig.map(|l| (shift - l).powi(-p)))
        }
        BarrierSide::Lower => {
            check_lower(&eig, shift, margin)?;
            Ok(eig.map(|l| (l - shift).powi(-p)))
        }
    }
}

/// Unique PSD square root.
pub fn psd_sqrt(a: &SquareMatrix) -> Result<SquareMatrix> {
    let eig = a.eigen()?;
    let lmin = eig.lambda_min();
    if lmin < -1e-8 * a.frobenius_norm() {
        return Err(Error::NotPsd { lambda_min: lmin });
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// `(lambda_min, lambda_max)`.
pub fn spectrum_bounds(a: &SquareMatrix) -> Result<(f64, f64)> {
    let eig = a.eigen()?;
    Ok((eig.lambda_min(), eig.lambda_max()))
}

/// `X (X^T diag(pi) X)^{-1/2}`: afterwards `sum_i pi_i x_i x_i^T = I`.
pub fn whiten(x: &VectorFamily, pi: &[f64]) -> Result<VectorFamily> {
    if pi.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: pi.len() });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("vector family"));
    }
    let g = x.weighted_gram(pi);
    let eig = g.eigen()?;
    let (lmin, lmax) = (eig.lambda_min(), eig.lambda_max());
    if !(lmax > 0.0) || lmin <= 1e-10 * lmax {
        return Err(Error::SingularGram { lambda_min: lmin, lambda_max: lmax });
    }
    let w = eig.map(|l| 1.0 / l.sqrt());
    let mut out = VectorFamily::new(x.dim());
    for v in x.iter() {
        let y = w.matvec(&v.to_dense(x.dim()));
        match v {
            FamilyVector::Dense(_) => out.push_dense(y)?,
            FamilyVector::Sparse { .. } => out.push_sparse(
                y.into_iter().enumerate().filter(|(_, a)| *a != 0.0).collect(),
            )?,
        }
    }
    Ok(out)
}

/// `||sum_i v_i v_i^T - I||_F`.
pub fn isotropy_deviation(v: &VectorFamily) -> f64 {
    v.gram().sub(&SquareMatrix::identity(v.dim())).frobenius_norm()
}

/// True iff `||sum_i v_i v_i^T - I||_F <= tol`.
pub fn check_isotropy(v: &VectorFamily, tol: f64) -> bool {
    isotropy_deviation(v) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(d: usize, seed: u64) -> SquareMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a.set(i, j, x);
                a.set(j, i, x);
            }
        }
        a
    }

    // Gauss-Jordan inverse, independent of the eigen path.
    fn gauss_inverse(a: &SquareMatrix) -> SquareMatrix {
        let d = a.dim();
        let mut m: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for c in 0..d {
            let p = (c..d).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for x in m[c].iter_mut() {
                *x /= piv;
            }
            for r in 0..d {
                if r != c {
                    let f = m[r][c];
                    let rowc = m[c].clone();
                    for (x, y) in m[r].iter_mut().zip(rowc) {
                        *x -= f * y;
                    }
                }
            }
        }
        SquareMatrix::from_rows(&m.into_iter().map(|r| r[d..].to_vec()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn quadratic_form_examples() {
        assert_eq!(quadratic_form(&[1.0, 0.0], &SquareMatrix::identity(2)).unwrap(), 1.0);
        let m = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(quadratic_form(&[1.0, 1.0], &m).unwrap(), 6.0);
        let m = SquareMatrix::from_diag(&[2.0, 5.0]);
        let v = [3.0, -1.0];
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                oracle += v[i] * m.get(i, j) * v[j];
            }
        }
        assert_eq!(oracle, 23.0);
        assert_eq!(quadratic_form(&v, &m).unwrap(), oracle);
        assert!(matches!(
            quadratic_form(&[1.0], &m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn barrier_examples() {
        let z = SquareMatrix::zeros(4);
        assert!((barrier_upper(&z, 8.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((barrier_lower(&z, -8.0).unwrap() - 0.5).abs() < 1e-15);
        let a = SquareMatrix::from_diag(&[1.0, 3.0]);
        assert!((barrier_upper(&a, 4.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        let a = SquareMatrix::from_diag(&[2.0, 5.0]);
        assert!((barrier_lower(&a, 1.0).unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn barrier_violations() {
        let a = SquareMatrix::from_diag(&[1.0, 3.0]);
        assert!(matches!(barrier_upper(&a, 3.0), Err(Error::BarrierViolation { .. })));
        assert!(matches!(barrier_upper(&a, 2.0), Err(Error::BarrierViolation { .. })));
        assert!(matches!(barrier_lower(&a, 1.0), Err(Error::BarrierViolation { .. })));
    }

    #[test]
    fn barrier_random_matches_eigen_oracle() {
        let a = random_symmetric(5, 11);
        let eig = a.eigen().unwrap();
        let u = eig.lambda_max() + 1.0;
        let ell = eig.lambda_min() - 1.0;
        let up: f64 = eig.values.iter().map(|l| 1.0 / (u - l)).sum();
        let lo: f64 = eig.values.iter().map(|l| 1.0 / (l - ell)).sum();
        assert!((barrier_upper(&a, u).unwrap() - up).abs() < 1e-9);
        assert!((barrier_lower(&a, ell).unwrap() - lo).abs() < 1e-9);
        // trace of the resolvent, computed by elimination
        let r = gauss_inverse(&SquareMatrix::identity(5).scaled(u).sub(&a));
        assert!((r.trace() - up).abs() < 1e-9);
    }

    #[test]
    fn shifted_inverse_examples() {
        let p = shifted_inverse_power(&SquareMatrix::zeros(2), 2.0, BarrierSide::Upper, 1).unwrap();
        assert!(p.max_abs_diff(&SquareMatrix::identity(2).scaled(0.5)) < 1e-15);
        let a = SquareMatrix::from_diag(&[1.0, 3.0]);
        let p = shifted_inverse_power(&a, 4.0, BarrierSide::Upper, 2).unwrap();
        assert!(p.max_abs_diff(&SquareMatrix::from_diag(&[1.0 / 9.0, 1.0])) < 1e-14);
        assert!(shifted_inverse_power(&a, 4.0, BarrierSide::Upper, 3).is_err());
    }

    #[test]
    fn shifted_inverse_random_vs_elimination() {
        let a = random_symmetric(6, 5);
        let (lmin, lmax) = spectrum_bounds(&a).unwrap();
        let u = lmax + 0.7;
        let inv = gauss_inverse(&SquareMatrix::identity(6).scaled(u).sub(&a));
        let sq = inv.matmul(&inv);
        let p2 = shifted_inverse_power(&a, u, BarrierSide::Upper, 2).unwrap();
        assert!(p2.sub(&sq).frobenius_norm() < 1e-8);
        let ell = lmin - 0.3;
        let inv = gauss_inverse(&a.sub(&SquareMatrix::identity(6).scaled(ell)));
        let p1 = shifted_inverse_power(&a, ell, BarrierSide::Lower, 1).unwrap();
        assert!(p1.sub(&inv).frobenius_norm() < 1e-8);
    }

    #[test]
    fn psd_sqrt_examples() {
        let i = SquareMatrix::identity(3);
        assert!(psd_sqrt(&i).unwrap().max_abs_diff(&i) < 1e-14);
        let a = SquareMatrix::from_diag(&[4.0, 9.0]);
        assert!(psd_sqrt(&a).unwrap().max_abs_diff(&SquareMatrix::from_diag(&[2.0, 3.0])) < 1e-14);
        let g = random_symmetric(5, 3);
        let gram = g.transpose().matmul(&g);
        let b = psd_sqrt(&gram).unwrap();
        assert!(b.transpose().matmul(&b).sub(&gram).frobenius_norm() < 1e-8 * gram.frobenius_norm().max(1.0));
        assert!(matches!(
            psd_sqrt(&SquareMatrix::from_diag(&[1.0, -1.0])),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(spectrum_bounds(&SquareMatrix::identity(3)).unwrap(), (1.0, 1.0));
        let (lo, hi) = spectrum_bounds(&SquareMatrix::from_diag(&[-1.0, 0.0, 7.0])).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 7.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstruction_and_orthonormality() {
        let a = random_symmetric(7, 9);
        let e = a.eigen().unwrap();
        assert!(e.reconstruct().sub(&a).frobenius_norm() <= 1e-8 * a.frobenius_norm());
        let q = &e.vectors;
        let qtq = q.transpose().matmul(q);
        assert!(qtq.sub(&SquareMatrix::identity(7)).frobenius_norm() <= 1e-8);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn whiten_examples() {
        let basis = VectorFamily::from_dense_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let w = whiten(&basis, &[1.0, 1.0]).unwrap();
        assert_eq!(w.dense_rows(), basis.dense_rows());
        let scaled = VectorFamily::from_dense_rows(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let w = whiten(&scaled, &[1.0, 1.0]).unwrap();
        for (r, e) in w.dense_rows().iter().zip(basis.dense_rows()) {
            for (a, b) in r.iter().zip(e) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        let rank1 = VectorFamily::from_dense_rows(vec![vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert!(matches!(whiten(&rank1, &[1.0, 1.0]), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn whiten_random_family_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> =
            (0..50).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let fam = VectorFamily::from_dense_rows(rows).unwrap();
        let pi: Vec<f64> = (0..50).map(|_| rng.gen_range(0.1..1.0)).collect();
        let w = whiten(&fam, &pi).unwrap();
        let g = w.weighted_gram(&pi);
        assert!(g.sub(&SquareMatrix::identity(4)).frobenius_norm() < 1e-8);
        let w1 = whiten(&fam, &vec![1.0; 50]).unwrap();
        assert!(check_isotropy(&w1, 1e-8));
    }

    #[test]
    fn isotropy_examples() {
        let good = VectorFamily::from_dense_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(check_isotropy(&good, 1e-12));
        let bad = VectorFamily::from_dense_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(!check_isotropy(&bad, 1e-3));
    }

    #[test]
    fn sparse_and_dense_agree() {
        let mut fam = VectorFamily::new(3);
        fam.push_sparse(vec![(2, 1.5), (0, -1.0)]).unwrap();
        fam.push_dense(vec![-1.0, 0.0, 1.5]).unwrap();
        assert_eq!(fam.nnz(0), 2);
        assert_eq!(fam.nnz(1), 2);
        let m = random_symmetric(3, 1);
        assert!((fam.get(0).quad(&m) - fam.get(1).quad(&m)).abs() < 1e-14);
        assert_eq!(fam.outer_nnz(), 8);
    }

    #[test]
    fn selection_accumulates() {
        let mut s = WeightedSelection::new();
        s.add(3, 0.5);
        s.add(1, 1.0);
        s.add(3, 0.25);
        assert_eq!(s.entries(), &[(1, 1.0), (3, 0.75)]);
        assert_eq!(s.support(), 2);
        assert_eq!(s.weights(4), vec![0.0, 1.0, 0.0, 0.75]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sym_strategy(d: usize) -> impl Strategy<Value = SquareMatrix> {
            proptest::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| {
                let m = SquareMatrix::from_row_major(d, v).unwrap();
                m.add(&m.transpose()).scaled(0.5)
            })
        }

        proptest! {
            #[test]
            fn upper_barrier_decreasing(a in sym_strategy(4), gap in 0.01f64..3.0, step in 0.01f64..2.0) {
                let (_, hi) = spectrum_bounds(&a).unwrap();
                let u = hi + gap;
                prop_assert!(barrier_upper(&a, u).unwrap() > barrier_upper(&a, u + step).unwrap());
            }

            #[test]
            fn barrier_is_trace_of_resolvent(a in sym_strategy(4), gap in 0.05f64..3.0) {
                let (_, hi) = spectrum_bounds(&a).unwrap();
                let u = hi + gap;
                let r = shifted_inverse_power(&a, u, BarrierSide::Upper, 1).unwrap();
                prop_assert!((r.trace() - barrier_upper(&a, u).unwrap()).abs() < 1e-9 * r.trace().max(1.0));
            }

            #[test]
            fn power_two_is_square(a in sym_strategy(4), gap in 0.1f64..3.0) {
                let (lo, _) = spectrum_bounds(&a).unwrap();
                let ell = lo - gap;
                let p1 = shifted_inverse_power(&a, ell, BarrierSide::Lower, 1).unwrap();
                let p2 = shifted_inverse_power(&a, ell, BarrierSide::Lower, 2).unwrap();
                prop_assert!(p1.matmul(&p1).sub(&p2).frobenius_norm() < 1e-8 * p2.frobenius_norm().max(1.0));
            }

            #[test]
            fn sqrt_of_square_roundtrips(diag in proptest::collection::vec(0.1f64..3.0, 4), seed in 0u64..1000) {
                let mut d = diag.clone();
                d.sort_by(f64::total_cmp);
                prop_assume!(d.windows(2).all(|w| w[1] - w[0] > 1e-3));
                let q = random_symmetric(4, seed).eigen().unwrap().vectors;
                let b = q.matmul(&SquareMatrix::from_diag(&diag)).matmul(&q.transpose());
                let back = psd_sqrt(&b.matmul(&b)).unwrap();
                prop_assert!(back.sub(&b).frobenius_norm() < 1e-7);
            }

            #[test]
            fn whiten_then_isotropic(rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 6..20)) {
                let fam = VectorFamily::from_dense_rows(rows).unwrap();
                let pi = vec![1.0; fam.len()];
                let g = fam.gram().eigen().unwrap();
                prop_assume!(g.lambda_min() > 1e-6 * g.lambda_max());
                let w = whiten(&fam, &pi).unwrap();
                prop_assert!(check_isotropy(&w, 1e-8));
            }
        }
    }
}
