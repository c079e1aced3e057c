//! Episode similarity graph and feature propagation.
//!
//! The graph has one vertex per support and query row. Edge weights are
//! cosine similarities, sparsified to the strongest `m` neighbours of each
//! vertex, symmetrically normalized as `D^-1/2 S D^-1/2`, and then used to
//! smooth features with `(alpha I + E)^gamma V`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SparseMatrix};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GraphParams {
    /// Neighbours kept per vertex. Values above `M - 1` keep every edge.
    pub m: usize,
    pub alpha: f64,
    /// Number of propagation steps.
    pub gamma: u32,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            m: 10,
            alpha: 1.0,
            gamma: 3,
        }
    }
}

/// Cosine similarity clamped to `[-1, 1]`. If either vector has zero norm the
/// similarity is defined as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_with(a, b, &mut Diagnostics::default())
}

/// [`cosine`], counting zero-norm inputs in `diag`.
pub fn cosine_with(a: &[f64], b: &[f64], diag: &mut Diagnostics) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let denom = math::norm(a) * math::norm(b);
    if denom == 0.0 {
        diag.zero_vectors += 1;
        return Ok(0.0);
    }
    Ok((math::dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Dense cosine-similarity matrix with a zero diagonal. Exactly symmetric.
pub fn build_similarity(v: &Matrix, diag: &mut Diagnostics) -> Result<Matrix> {
    let n = v.rows();
    if n < 2 {
        return Err(Error::out_of_range("vertex count", n as f64, ">= 2"));
    }
    if let Some(index) = v.first_non_finite() {
        return Err(Error::NonFinite {
            context: "graph vertices",
            index,
        });
    }
    let norms: Vec<f64> = v.iter_rows().map(math::norm).collect();
    diag.zero_vectors += norms.iter().filter(|&&x| x == 0.0).count() as u64;

    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            let c = if denom == 0.0 {
                0.0
            } else {
                (math::dot(v.row(i), v.row(j)) / denom).clamp(-1.0, 1.0)
            };
            s[(i, j)] = c;
            s[(j, i)] = c;
        }
    }
    Ok(s)
}

/// Column indices of the `m` largest off-diagonal entries of row `i`, ties
/// going to the lower column index.
fn top_m_of_row(s: &Matrix, i: usize, m: usize) -> Vec<usize> {
    let row = s.row(i);
    let mut cols: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    // stable sort keeps ascending column order among equal values
    cols.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    cols.truncate(m);
    cols
}

/// Keeps entry `(i, j)` iff it is among the `m` largest of row `i` or among
/// the `m` largest of row `j`. For symmetric input the result is symmetric.
pub fn sparsify_top_m(s: &Matrix, m: usize) -> Result<SparseMatrix> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::ShapeMismatch {
            context: "sparsify_top_m",
            expected: (n, n),
            actual: s.shape(),
        });
    }
    if m == 0 || m + 1 > n {
        return Err(Error::out_of_range("m", m as f64, "1 <= m <= M - 1"));
    }
    let mut keep = vec![false; n * n];
    for i in 0..n {
        for j in top_m_of_row(s, i, m) {
            keep[i * n + j] = true;
            keep[j * n + i] = true;
        }
    }
    Ok(SparseMatrix::from_dense_filtered(s, |i, j| keep[i * n + j]))
}

/// `E = D^-1/2 S D^-1/2` with `D_ii = sum_j S_ij`.
///
/// Vertices with a non-positive degree (possible when negative cosines
/// survive sparsification) get an all-zero row and column in `E`; each one
/// is counted in `diag.isolated_vertices`.
pub fn normalize(s: &SparseMatrix, diag: &mut Diagnostics) -> SparseMatrix {
    let inv_sqrt: Vec<Option<f64>> = (0..s.n())
        .map(|i| {
            let d = s.row_sum(i);
            (d > 0.0 && d.is_finite()).then(|| 1.0 / math::sqrt(d))
        })
        .collect();
    diag.isolated_vertices += inv_sqrt.iter().filter(|x| x.is_none()).count() as u64;
    s.filter_map(|i, j, v| {
        let (a, b) = (inv_sqrt[i]?, inv_sqrt[j]?);
        // a * b == b * a in IEEE arithmetic, so E stays exactly symmetric
        Some(v * (a * b))
    })
}

/// `(alpha I + E)^gamma V`, applied as `gamma` sparse steps `x <- alpha x + E x`.
pub fn propagate(v: &Matrix, adjacency: &SparseMatrix, alpha: f64, gamma: u32) -> Result<Matrix> {
    if adjacency.n() != v.rows() {
        return Err(Error::ShapeMismatch {
            context: "propagate",
            expected: (adjacency.n(), v.cols()),
            actual: v.shape(),
        });
    }
    let mut x = v.clone();
    for _ in 0..gamma {
        let mut next = adjacency.mul_dense(&x)?;
        for (n, &c) in next.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *n += alpha * c;
        }
        x = next;
    }
    Ok(x)
}

/// The graph built for one episode together with its propagated features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    /// Stacked support then query features.
    pub v: Matrix,
    /// Similarities after sparsification.
    pub s: SparseMatrix,
    pub adjacency: SparseMatrix,
    pub v_new: Matrix,
    pub support_rows: Range<usize>,
    pub query_rows: Range<usize>,
}

impl TaskGraph {
    /// Builds the graph over `support` stacked on `query` and propagates.
    pub fn build(
        support: &Matrix,
        query: &Matrix,
        params: &GraphParams,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        let v = support.vstack(query)?;
        let n = v.rows();
        let similarity = build_similarity(&v, diag)?;
        let s = sparsify_top_m(&similarity, params.m.clamp(1, n - 1))?;
        let adjacency = normalize(&s, diag);
        let v_new = propagate(&v, &adjacency, params.alpha, params.gamma)?;
        Ok(Self {
            v,
            s,
            adjacency,
            v_new,
            support_rows: 0..support.rows(),
            query_rows: support.rows()..n,
        })
    }

    pub fn support_features(&self) -> Matrix {
        self.v_new.slice_rows(self.support_rows.clone())
    }

    pub fn query_features(&self) -> Matrix {
        self.v_new.slice_rows(self.query_rows.clone())
    }
}
