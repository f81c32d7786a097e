//! Deterministic positive inner-product search trees.
//!
//! Both trees answer: given `A`, return some `i` with `<M_i, A> > 0`, under the
//! promise that `sum_i <M_i, A> > 0`. "Positive" is strict with no slack.
//!
//! The descent goes left when the left child is positive, otherwise right when
//! the right child is positive. If both children are nonpositive the search
//! fails with [`Error::NoPositiveEntry`] when the root sum is nonpositive, and
//! otherwise (roundoff) follows the larger child.

use crate::error::{Error, Result};
use crate::linalg::{SquareMatrix, VectorFamily};

/// Sparse symmetric-or-not d x d matrix as sorted `(flat index, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
struct SparseSum {
    entries: Vec<(usize, f64)>,
}

impl SparseSum {
    fn from_dense(m: &SquareMatrix) -> Self {
        let entries = m
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, &x)| (i, x))
            .collect();
        Self { entries }
    }

    fn merged(a: &SparseSum, b: &SparseSum, sign: f64) -> SparseSum {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(a.entries.len() + b.entries.len());
        while i < a.entries.len() || j < b.entries.len() {
            let ka = a.entries.get(i).map(|e| e.0).unwrap_or(usize::MAX);
            let kb = b.entries.get(j).map(|e| e.0).unwrap_or(usize::MAX);
            if ka < kb {
                out.push(a.entries[i]);
                i += 1;
            } else if kb < ka {
                out.push((kb, sign * b.entries[j].1));
                j += 1;
            } else {
                out.push((ka, a.entries[i].1 + sign * b.entries[j].1));
                i += 1;
                j += 1;
            }
        }
        SparseSum { entries: out }
    }

    fn inner(&self, a: &SquareMatrix) -> f64 {
        let data = a.as_slice();
        self.entries.iter().map(|&(k, x)| x * data[k]).sum()
    }

    fn to_dense(&self, dim: usize) -> SquareMatrix {
        let mut data = vec![0.0; dim * dim];
        for &(k, x) in &self.entries {
            data[k] = x;
        }
        SquareMatrix::from_row_major(dim, data).expect("dimension is consistent")
    }
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    children: Option<(usize, usize)>,
    parent: Option<usize>,
    sum: SparseSum,
}

/// Result of a positive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    /// 0-based index of the returned leaf (or input vector).
    pub index: usize,
    /// `<M_index, A>`, strictly positive.
    pub value: f64,
    /// Node inner products evaluated during the descent.
    pub inner_products: usize,
}

/// Complete binary tree of range sums over `M_0..M_{m-1}`.
///
/// Node `(i1, i2)` stores `sum_{i=i1}^{i2} M_i` and splits at `(i1 + i2) / 2`.
#[derive(Debug, Clone)]
pub struct MatrixSearchTree {
    dim: usize,
    nodes: Vec<Node>,
    leaf_node: Vec<usize>,
    root: usize,
}

impl MatrixSearchTree {
    pub fn new(leaves: &[SquareMatrix]) -> Result<Self> {
        let first = leaves.first().ok_or(Error::EmptyInput("search tree leaves"))?;
        let dim = first.dim();
        for m in leaves {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
            }
        }
        let mut tree = Self {
            dim,
            nodes: Vec::with_capacity(2 * leaves.len()),
            leaf_node: vec![0; leaves.len()],
            root: 0,
        };
        tree.root = tree.build(leaves, 0, leaves.len() - 1, None);
        Ok(tree)
    }

    fn build(&mut self, leaves: &[SquareMatrix], lo: usize, hi: usize, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, children: None, parent, sum: SparseSum { entries: vec![] } });
        if lo == hi {
            self.nodes[id].sum = SparseSum::from_dense(&leaves[lo]);
            self.leaf_node[lo] = id;
        } else {
            let k = (lo + hi) / 2;
            let l = self.build(leaves, lo, k, Some(id));
            let r = self.build(leaves, k + 1, hi, Some(id));
            self.nodes[id].sum = SparseSum::merged(&self.nodes[l].sum, &self.nodes[r].sum, 1.0);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    pub fn len(&self) -> usize {
        self.leaf_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_node.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sum stored at the root.
    pub fn root_sum(&self) -> SquareMatrix {
        self.nodes[self.root].sum.to_dense(self.dim)
    }

    /// Every node as `(lo, hi, stored sum)`, in construction order.
    pub fn node_sums(&self) -> Vec<(usize, usize, SquareMatrix)> {
        self.nodes.iter().map(|n| (n.lo, n.hi, n.sum.to_dense(self.dim))).collect()
    }

    /// Stored nonzeros across all nodes.
    pub fn stored_nonzeros(&self) -> usize {
        self.nodes.iter().map(|n| n.sum.entries.len()).sum()
    }

    /// Maximum root-to-leaf depth in edges.
    pub fn depth(&self) -> usize {
        fn go(t: &MatrixSearchTree, id: usize) -> usize {
            match t.nodes[id].children {
                None => 0,
                Some((l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, self.root)
    }

    /// Returns some `i` with `<M_i, A> > 0`.
    pub fn query_positive(&self, a: &SquareMatrix) -> Result<SearchHit> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim() });
        }
        let mut cost = 1;
        let root = self.nodes[self.root].sum.inner(a);
        let mut value = root;
        let mut id = self.root;
        while let Some((l, r)) = self.nodes[id].children {
            let p1 = self.nodes[l].sum.inner(a);
            cost += 1;
            if p1 > 0.0 {
                id = l;
                value = p1;
                continue;
            }
            let p2 = self.nodes[r].sum.inner(a);
            cost += 1;
            if p2 > 0.0 {
                id = r;
                value = p2;
                continue;
            }
            if !(root > 0.0) {
                return Err(Error::NoPositiveEntry);
            }
            (id, value) = if p2 >= p1 { (r, p2) } else { (l, p1) };
        }
        if value > 0.0 {
            Ok(SearchHit { index: self.nodes[id].lo, value, inner_products: cost })
        } else if !(root > 0.0) {
            Err(Error::NoPositiveEntry)
        } else {
            Err(Error::NumericalWarning(format!(
                "descent reached leaf {} with inner product {value} despite positive root",
                self.nodes[id].lo
            )))
        }
    }

    /// Greedy descent toward large `<M_i, num> / <M_i, den>`: at each node the
    /// child with the larger subtree ratio is followed (`den` must be positive
    /// on every nonzero node). A heuristic; no optimality promise.
    pub fn query_ratio(&self, num: &SquareMatrix, den: &SquareMatrix) -> Result<SearchHit> {
        if num.dim() != self.dim || den.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: num.dim().max(den.dim()) });
        }
        let ratio = |s: &SparseSum| {
            let b = s.inner(den);
            if b > 0.0 {
                s.inner(num) / b
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut cost = 0;
        let mut id = self.root;
        while let Some((l, r)) = self.nodes[id].children {
            let (a, b) = (ratio(&self.nodes[l].sum), ratio(&self.nodes[r].sum));
            cost += 2;
            id = if b > a { r } else { l };
        }
        Ok(SearchHit { index: self.nodes[id].lo, value: self.nodes[id].sum.inner(num), inner_products: cost + 1 })
    }

    /// Replaces leaf `i` and propagates the difference to its ancestors.
    pub fn update(&mut self, i: usize, m_new: &SquareMatrix) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        if m_new.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: m_new.dim() });
        }
        let leaf = self.leaf_node[i];
        let new_sum = SparseSum::from_dense(m_new);
        if new_sum == self.nodes[leaf].sum {
            return Ok(());
        }
        let delta = SparseSum::merged(&new_sum, &self.nodes[leaf].sum, -1.0);
        self.nodes[leaf].sum = new_sum;
        let mut cur = self.nodes[leaf].parent;
        while let Some(p) = cur {
            self.nodes[p].sum = SparseSum::merged(&self.nodes[p].sum, &delta, 1.0);
            cur = self.nodes[p].parent;
        }
        Ok(())
    }
}

/// Batched tree over `m` vectors grouped into `d x d` leaf blocks.
///
/// Level 0 holds `S_{0,j} = V_j V_j^T`; level `i + 1` sums adjacent pairs of
/// level `i` (an unpaired last node is carried up unchanged). Inputs are padded
/// with zero vectors to a multiple of `d`; padded slots are never returned.
#[derive(Debug, Clone)]
pub struct BatchedVectorSearchTree {
    dim: usize,
    m: usize,
    /// Dense input vectors, padded.
    vectors: Vec<Vec<f64>>,
    levels: Vec<Vec<SquareMatrix>>,
}

impl BatchedVectorSearchTree {
    pub fn new(v: &VectorFamily) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::EmptyInput("vector family"));
        }
        let d = v.dim();
        let m = v.len();
        let blocks = m.div_ceil(d);
        let mut vectors = v.dense_rows();
        vectors.resize(blocks * d, vec![0.0; d]);
        let mut level0 = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let mut s = SquareMatrix::zeros(d);
            for vec in &vectors[b * d..(b + 1) * d] {
                s.add_outer(vec, 1.0);
            }
            level0.push(s);
        }
        let mut levels = vec![level0];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next: Vec<SquareMatrix> = prev
                .chunks(2)
                .map(|c| if c.len() == 2 { c[0].add(&c[1]) } else { c[0].clone() })
                .collect();
            levels.push(next);
        }
        Ok(Self { dim: d, m, vectors, levels })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn block_count(&self) -> usize {
        self.levels[0].len()
    }

    /// `S_{i,j}`: sum of outer products over blocks `[j 2^i, (j+1) 2^i)`.
    pub fn level_sum(&self, level: usize, j: usize) -> Option<&SquareMatrix> {
        self.levels.get(level).and_then(|l| l.get(j))
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Returns some input index `i` with `v_i^T A v_i > 0`.
    pub fn query_positive(&self, a: &SquareMatrix) -> Result<SearchHit> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim() });
        }
        let top = self.levels.len() - 1;
        let mut cost = 1;
        let root = self.levels[top][0].inner(a);
        let mut j = 0;
        for level in (0..top).rev() {
            let row = &self.levels[level];
            let l = 2 * j;
            let p1 = row[l].inner(a);
            cost += 1;
            if p1 > 0.0 {
                j = l;
                continue;
            }
            if l + 1 >= row.len() {
                if !(root > 0.0) {
                    return Err(Error::NoPositiveEntry);
                }
                j = l;
                continue;
            }
            let p2 = row[l + 1].inner(a);
            cost += 1;
            if p2 > 0.0 {
                j = l + 1;
                continue;
            }
            if !(root > 0.0) {
                return Err(Error::NoPositiveEntry);
            }
            j = if p2 >= p1 { l + 1 } else { l };
        }
        let d = self.dim;
        // diagonal of V_j^T A V_j
        for k in 0..d {
            let idx = j * d + k;
            if idx >= self.m {
                break;
            }
            let v = &self.vectors[idx];
            let b = crate::linalg::quadratic_form(v, a)?;
            if b > 0.0 {
                return Ok(SearchHit { index: idx, value: b, inner_products: cost });
            }
        }
        if !(root > 0.0) {
            return Err(Error::NoPositiveEntry);
        }
        Err(Error::NumericalWarning(format!(
            "leaf block {j} has no strictly positive diagonal despite positive root"
        )))
    }
    /// Greedy descent toward large `v_i^T num v_i / v_i^T den v_i`, following
    /// the child block sum with the larger ratio, then the best vector of the
    /// leaf block. A heuristic; no optimality promise.
    pub fn query_ratio(&self, num: &SquareMatrix, den: &SquareMatrix) -> Result<SearchHit> {
        if num.dim() != self.dim || den.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: num.dim().max(den.dim()) });
        }
        let ratio = |s: &SquareMatrix| {
            let b = s.inner(den);
            if b > 0.0 {
                s.inner(num) / b
            } else {
                f64::NEG_INFINITY
            }
        };
        let top = self.levels.len() - 1;
        let mut cost = 0;
        let mut j = 0;
        for level in (0..top).rev() {
            let row = &self.levels[level];
            let l = 2 * j;
            if l + 1 >= row.len() {
                j = l;
                continue;
            }
            cost += 2;
            j = if ratio(&row[l + 1]) > ratio(&row[l]) { l + 1 } else { l };
        }
        let d = self.dim;
        let mut best: Option<(usize, f64, f64)> = None;
        for idx in j * d..((j + 1) * d).min(self.m) {
            let v = &self.vectors[idx];
            let (a, b) = (crate::linalg::quadratic_form(v, num)?, crate::linalg::quadratic_form(v, den)?);
            let r = if b > 0.0 { a / b } else { f64::NEG_INFINITY };
            if best.map_or(true, |(_, br, _)| r > br) {
                best = Some((idx, r, a));
            }
        }
        let (index, _, value) = best.ok_or(Error::NoPositiveEntry)?;
        Ok(SearchHit { index, value, inner_products: cost })
    }
}
