//! Trainable class prototypes.
//!
//! Prototypes are fitted against
//!
//! ```text
//! L_total = lambda * L_entropy + delta * L_class + L_metric
//! ```
//!
//! where, with `N` classes, `y_i = softmax(W proto_i + b)` from the frozen
//! head and `R = N k` support rows,
//!
//! ```text
//! L_class   = 1/N sum_i -1/N log y_i[i]
//! L_entropy = 1/N sum_i -1/N sum_c y_i[c] log y_i[c]
//! L_metric  = 1/R sum_r -1/N log softmax_c(cos(v_r, proto_c))[label_r]
//! ```
//!
//! The inner `1/N` factors are part of the objective as defined and are kept
//! as is; they only rescale each term.
//!
//! Gradients are closed-form; only the prototypes are parameters.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::headcls::LinearHead;
use crate::linalg::Matrix;
use crate::math;
use crate::optim::{self, AdamConfig, AdamState};

/// Epochs excluded from the monotonicity diagnostic.
pub const PROTO_WARMUP_EPOCHS: usize = 50;
/// Slack allowed on loss increases after warm-up.
pub const PROTO_MONOTONE_SLACK: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub protos: Matrix,
    /// `true` for optimized prototypes, `false` for class means.
    pub trained: bool,
}

impl PrototypeBank {
    pub fn n_classes(&self) -> usize {
        self.protos.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    /// Weight of the entropy term.
    pub lambda: f64,
    /// Weight of the head classification term.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("delta", self.delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::out_of_range(name, v, "finite, >= 0"));
            }
        }
        Ok(())
    }
}

/// How prototypes are obtained for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProtoStrategy {
    /// Optimize prototypes against the composite loss.
    #[default]
    Trained,
    /// Class means of the aggregated support features.
    Mean,
}

/// Starting point of prototype training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProtoInit {
    /// Entries drawn from `N(0, 1/e)`, so initial norms are about 1.
    #[default]
    Random,
    /// Class means of the aggregated support features.
    Means,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtoConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub strategy: ProtoStrategy,
    pub init: ProtoInit,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-2,
            weights: LossWeights::default(),
            strategy: ProtoStrategy::Trained,
            init: ProtoInit::Random,
        }
    }
}

fn check_support(support: &Matrix, labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.len() != support.rows() {
        return Err(Error::CountMismatch {
            what: "support labels",
            expected: support.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::out_of_range(
            "support label",
            l as f64,
            "< n_classes",
        ));
    }
    Ok(())
}

fn check_protos(protos: &Matrix, head: &LinearHead) -> Result<()> {
    if protos.shape() != head.weights.shape() {
        return Err(Error::ShapeMismatch {
            context: "prototypes vs head",
            expected: head.weights.shape(),
            actual: protos.shape(),
        });
    }
    Ok(())
}

/// Arithmetic mean of each class's support rows.
pub fn mean_prototypes(
    support: &Matrix,
    labels: &[usize],
    n_classes: usize,
) -> Result<PrototypeBank> {
    check_support(support, labels, n_classes)?;
    let mut sums = Matrix::zeros(n_classes, support.cols());
    let mut counts = vec![0usize; n_classes];
    for (row, &l) in support.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums.row_mut(l).iter_mut().zip(row) {
            *s += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
        sums.row_mut(c).iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(PrototypeBank {
        protos: sums,
        trained: false,
    })
}

/// Value and prototype gradient of one loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Log-probabilities of the head for each prototype.
fn head_log_probs(protos: &Matrix, head: &LinearHead) -> Vec<Vec<f64>> {
    protos
        .iter_rows()
        .map(|p| optim::log_softmax(&head.logits(p)))
        .collect()
}

/// Back-propagates per-prototype logit gradients through the head: `dp_i = W^T dz_i`.
fn through_head(head: &LinearHead, dz: &[Vec<f64>]) -> Matrix {
    let mut grad = Matrix::zeros(dz.len(), head.dim());
    for (i, dzi) in dz.iter().enumerate() {
        let out = grad.row_mut(i);
        for (w, &d) in head.weights.iter_rows().zip(dzi) {
            for (o, x) in out.iter_mut().zip(w) {
                *o += d * x;
            }
        }
    }
    grad
}

pub fn loss_class(protos: &Matrix, head: &LinearHead) -> Result<f64> {
    loss_class_grad(protos, head).map(|t| t.value)
}

/// Classification term. `d/dz_i = (y_i - onehot_i) / N^2`, zero where the
/// log is floored.
pub fn loss_class_grad(protos: &Matrix, head: &LinearHead) -> Result<TermGrad> {
    check_protos(protos, head)?;
    let n = protos.rows();
    let norm = 1.0 / (n * n) as f64;
    let floor = math::ln(optim::LOG_FLOOR);
    let mut value = 0.0;
    let mut dz = Vec::with_capacity(n);
    for (i, logp) in head_log_probs(protos, head).into_iter().enumerate() {
        let mut d = vec![0.0; n];
        if logp[i] > floor {
            value -= logp[i];
            for (c, lp) in logp.iter().enumerate() {
                d[c] = norm * (math::exp(*lp) - if c == i { 1.0 } else { 0.0 });
            }
        } else {
            value -= floor;
        }
        dz.push(d);
    }
    Ok(TermGrad {
        value: value * norm,
        grad: through_head(head, &dz),
    })
}

pub fn loss_entropy(protos: &Matrix, head: &LinearHead) -> Result<f64> {
    loss_entropy_grad(protos, head).map(|t| t.value)
}

/// Entropy term. With `H_i = -sum_c y_c log y_c`,
/// `dH_i/dz_j = -y_j (log y_j + H_i)`.
pub fn loss_entropy_grad(protos: &Matrix, head: &LinearHead) -> Result<TermGrad> {
    check_protos(protos, head)?;
    let n = protos.rows();
    let norm = 1.0 / (n * n) as f64;
    let mut value = 0.0;
    let mut dz = Vec::with_capacity(n);
    for logp in head_log_probs(protos, head) {
        let probs: Vec<f64> = logp.iter().map(|&l| math::exp(l)).collect();
        let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        value += h;
        dz.push(
            probs
                .iter()
                .zip(&logp)
                .map(|(p, l)| -norm * p * (l + h))
                .collect(),
        );
    }
    Ok(TermGrad {
        value: value * norm,
        grad: through_head(head, &dz),
    })
}

pub fn loss_metric(protos: &Matrix, support: &Matrix, labels: &[usize]) -> Result<f64> {
    loss_metric_grad(protos, support, labels).map(|t| t.value)
}

/// Metric term over the support rows. With `c_n = cos(v, p_n)` and
/// `s = softmax(c)`, each row adds `(s_n - [n = y]) / (R N)` times
/// `dc_n/dp_n = v / (|v| |p_n|) - c_n p_n / |p_n|^2` to prototype `n`.
pub fn loss_metric_grad(protos: &Matrix, support: &Matrix, labels: &[usize]) -> Result<TermGrad> {
    let n = protos.rows();
    check_support(support, labels, n)?;
    if support.cols() != protos.cols() {
        return Err(Error::DimensionMismatch {
            expected: protos.cols(),
            actual: support.cols(),
        });
    }
    let proto_norms = nonzero_norms(protos, "prototype")?;
    let support_norms = nonzero_norms(support, "support")?;
    let mut grad = Matrix::zeros(n, protos.cols());
    let rows = support.rows();
    if rows == 0 {
        return Ok(TermGrad { value: 0.0, grad });
    }
    let scale = 1.0 / (rows * n) as f64;
    let mut value = 0.0;
    let mut cos = vec![0.0; n];
    for ((v, &vn), &y) in support.iter_rows().zip(&support_norms).zip(labels) {
        for (c, (p, &pn)) in cos.iter_mut().zip(protos.iter_rows().zip(&proto_norms)) {
            *c = math::dot(v, p) / (vn * pn);
        }
        let logs = optim::log_softmax(&cos);
        value -= logs[y];
        for (k, (p, &pn)) in protos.iter_rows().zip(&proto_norms).enumerate() {
            let g = scale * (math::exp(logs[k]) - if k == y { 1.0 } else { 0.0 });
            let a = g / (vn * pn);
            let b = g * cos[k] / (pn * pn);
            for ((o, &x), &pj) in grad.row_mut(k).iter_mut().zip(v).zip(p) {
                *o += a * x - b * pj;
            }
        }
    }
    Ok(TermGrad {
        value: value * scale,
        grad,
    })
}

fn nonzero_norms(m: &Matrix, context: &'static str) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(row, r)| {
            let n = math::norm(r);
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm { context, row })
            }
        })
        .collect()
}

pub fn loss_total(
    protos: &Matrix,
    head: &LinearHead,
    support: &Matrix,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<f64> {
    loss_total_grad(protos, head, support, labels, weights).map(|t| t.value)
}

/// `lambda * L_entropy + delta * L_class + L_metric` and its prototype gradient.
pub fn loss_total_grad(
    protos: &Matrix,
    head: &LinearHead,
    support: &Matrix,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<TermGrad> {
    let class = loss_class_grad(protos, head)?;
    let entropy = loss_entropy_grad(protos, head)?;
    let mut total = loss_metric_grad(protos, support, labels)?;
    total.value += weights.lambda * entropy.value + weights.delta * class.value;
    for ((t, e), c) in total
        .grad
        .as_mut_slice()
        .iter_mut()
        .zip(entropy.grad.as_slice())
        .zip(class.grad.as_slice())
    {
        *t += weights.lambda * e + weights.delta * c;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoTraining {
    pub bank: PrototypeBank,
    /// Loss before each epoch's update, followed by the final loss.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on [`loss_total`] with the head and support features frozen.
pub fn train_prototypes<R: Rng + ?Sized>(
    head: &LinearHead,
    support: &Matrix,
    labels: &[usize],
    config: &ProtoConfig,
    rng: &mut R,
    diag: &mut Diagnostics,
) -> Result<ProtoTraining> {
    if config.epochs == 0 {
        return Err(Error::out_of_range("proto epochs", 0.0, ">= 1"));
    }
    config.weights.validate()?;
    let (n, e) = (head.n_classes(), head.dim());
    check_support(support, labels, n)?;

    let mut protos = match config.init {
        ProtoInit::Random => {
            let std = 1.0 / math::sqrt(e as f64);
            let data = (0..n * e)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::from_vec(n, e, data)?
        }
        ProtoInit::Means => mean_prototypes(support, labels, n)?.protos,
    };
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), n * e);
    let mut losses = Vec::with_capacity(config.epochs + 1);

    for epoch in 0..config.epochs {
        let step = loss_total_grad(&protos, head, support, labels, &config.weights)?;
        record_loss(&mut losses, step.value, epoch, diag)?;
        adam.update(protos.as_mut_slice(), step.grad.as_slice())?;
    }
    if let Some(index) = protos.first_non_finite() {
        return Err(Error::NonFinite {
            context: "trained prototypes",
            index,
        });
    }
    let final_loss = loss_total(&protos, head, support, labels, &config.weights)?;
    record_loss(&mut losses, final_loss, config.epochs, diag)?;
    nonzero_norms(&protos, "trained prototype")?;
    Ok(ProtoTraining {
        bank: PrototypeBank {
            protos,
            trained: true,
        },
        losses,
    })
}

fn record_loss(
    losses: &mut Vec<f64>,
    loss: f64,
    epoch: usize,
    diag: &mut Diagnostics,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            phase: "prototypes",
            epoch,
        });
    }
    if epoch > PROTO_WARMUP_EPOCHS
        && losses
            .last()
            .is_some_and(|&prev| loss > prev + PROTO_MONOTONE_SLACK)
    {
        diag.proto_loss_increases += 1;
    }
    losses.push(loss);
    Ok(())
}
