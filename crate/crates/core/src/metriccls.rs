//! Cosine classification against prototypes, with optional attention masks.
//!
//! The mask for class `n` is `softmax(mu * |proto_n|)` over feature
//! dimensions. A masked query is `epsilon * query * mask_n + query`
//! (elementwise), scored against `proto_n` only.

use alloc::vec;
use alloc::vec::Vec;

use crate::diag::Diagnostics;
use crate::embedset::Episode;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::optim;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMasks {
    /// One probability vector per class, `N x e`.
    pub masks: Matrix,
    pub mu: f64,
    pub epsilon: f64,
}

impl AttentionMasks {
    pub fn n_classes(&self) -> usize {
        self.masks.rows()
    }

    pub fn mask(&self, class: usize) -> &[f64] {
        self.masks.row(class)
    }
}

pub fn build_masks(protos: &Matrix, mu: f64, epsilon: f64) -> AttentionMasks {
    let mut masks = protos.clone();
    for row in 0..masks.rows() {
        let r = masks.row_mut(row);
        r.iter_mut().for_each(|x| *x = mu * x.abs());
        optim::softmax_in_place(r);
    }
    AttentionMasks { masks, mu, epsilon }
}

pub fn correct_query(query: &[f64], masks: &AttentionMasks, class: usize) -> Result<Vec<f64>> {
    let mask = masks.mask(class);
    if mask.len() != query.len() {
        return Err(Error::DimensionMismatch {
            expected: mask.len(),
            actual: query.len(),
        });
    }
    Ok(query
        .iter()
        .zip(mask)
        .map(|(q, m)| masks.epsilon * q * m + q)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Cosine scores of one query against every prototype.
///
/// A zero query scores 0 everywhere, predicts class 0 and is counted in
/// `diag.zero_queries`. Ties go to the lowest class index.
pub fn classify(
    query: &[f64],
    protos: &Matrix,
    masks: Option<&AttentionMasks>,
    diag: &mut Diagnostics,
) -> Result<Classification> {
    let norms = proto_norms(protos)?;
    classify_with_norms(query, protos, &norms, masks, diag)
}

fn proto_norms(protos: &Matrix) -> Result<Vec<f64>> {
    protos
        .iter_rows()
        .enumerate()
        .map(|(row, p)| match math::norm(p) {
            n if n > 0.0 => Ok(n),
            _ => Err(Error::ZeroNorm {
                context: "prototype",
                row,
            }),
        })
        .collect()
}

fn classify_with_norms(
    query: &[f64],
    protos: &Matrix,
    norms: &[f64],
    masks: Option<&AttentionMasks>,
    diag: &mut Diagnostics,
) -> Result<Classification> {
    if query.len() != protos.cols() {
        return Err(Error::DimensionMismatch {
            expected: protos.cols(),
            actual: query.len(),
        });
    }
    if let Some(m) = masks {
        if m.masks.shape() != protos.shape() {
            return Err(Error::ShapeMismatch {
                context: "masks vs prototypes",
                expected: protos.shape(),
                actual: m.masks.shape(),
            });
        }
    }
    let n = protos.rows();
    if math::norm(query) == 0.0 {
        diag.zero_queries += 1;
        return Ok(Classification {
            class: 0,
            scores: vec![0.0; n],
        });
    }
    let mut scores = Vec::with_capacity(n);
    for (c, (p, &pn)) in protos.iter_rows().zip(norms).enumerate() {
        let s = match masks {
            Some(m) => {
                let q = correct_query(query, m, c)?;
                math::dot(&q, p) / (math::norm(&q) * pn)
            }
            None => math::dot(query, p) / (math::norm(query) * pn),
        };
        scores.push(s.clamp(-1.0, 1.0));
    }
    let class = argmax(&scores);
    Ok(Classification { class, scores })
}

/// Index of the largest value; the first one wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class for every row of `queries`.
pub fn classify_all(
    queries: &Matrix,
    protos: &Matrix,
    masks: Option<&AttentionMasks>,
    diag: &mut Diagnostics,
) -> Result<Vec<usize>> {
    let norms = proto_norms(protos)?;
    queries
        .iter_rows()
        .map(|q| classify_with_norms(q, protos, &norms, masks, diag).map(|c| c.class))
        .collect()
}

/// Fraction of queries predicted correctly.
pub fn score_episode(episode: &Episode, predictions: &[usize]) -> Result<f64> {
    accuracy(episode.query_labels().as_slice(), predictions)
}

pub(crate) fn accuracy(truth: &[usize], predictions: &[usize]) -> Result<f64> {
    if truth.len() != predictions.len() {
        return Err(Error::CountMismatch {
            what: "predictions",
            expected: truth.len(),
            actual: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::CountMismatch {
            what: "queries",
            expected: 1,
            actual: 0,
        });
    }
    let correct = truth
        .iter()
        .zip(predictions)
        .filter(|(t, p)| t == p)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}
