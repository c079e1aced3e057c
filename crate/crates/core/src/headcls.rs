//! Linear softmax head trained on augmented support features.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::{self, AdamConfig, AdamState};

/// Slack allowed on epoch-to-epoch loss increases before a diagnostic is counted.
pub const HEAD_MONOTONE_SLACK: f64 = 1e-6;

/// `softmax(W f + b)` with `W: [N x e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                expected: weights.rows(),
                actual: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(n_classes, dim),
            bias: vec![0.0; n_classes],
        }
    }

    /// Weights drawn from `N(0, init_std^2)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        n_classes: usize,
        dim: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut head = Self::zeros(n_classes, dim);
        for w in head.weights.as_mut_slice() {
            *w = init_std * rng.sample::<f64, _>(StandardNormal);
        }
        head
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_params(&self) -> usize {
        self.n_classes() * (self.dim() + 1)
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| crate::math::dot(w, f) + b)
            .collect()
    }

    pub fn predict_one(&self, f: &[f64]) -> Vec<f64> {
        optim::softmax(&self.logits(f))
    }

    /// Parameters flattened as `[W row-major, b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        let split = self.weights.as_slice().len();
        self.weights
            .as_mut_slice()
            .copy_from_slice(&params[..split]);
        self.bias.copy_from_slice(&params[split..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.first_non_finite().is_none() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Row-wise `softmax(W f + b)`.
pub fn head_predict(head: &LinearHead, feats: &Matrix) -> Result<Matrix> {
    check_dim(head, feats)?;
    let mut out = Matrix::zeros(feats.rows(), head.n_classes());
    for (i, f) in feats.iter_rows().enumerate() {
        let logits = head.logits(f);
        out.row_mut(i).copy_from_slice(&logits);
        optim::softmax_in_place(out.row_mut(i));
    }
    Ok(out)
}

fn check_dim(head: &LinearHead, feats: &Matrix) -> Result<()> {
    if feats.cols() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            actual: feats.cols(),
        });
    }
    Ok(())
}

fn check_labels(feats: &Matrix, labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.len() != feats.rows() {
        return Err(Error::CountMismatch {
            what: "labels",
            expected: feats.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::out_of_range("label", l as f64, "< n_classes"));
    }
    Ok(())
}

/// Mean cross-entropy of the head over `(feats, labels)`.
pub fn head_loss(head: &LinearHead, feats: &Matrix, labels: &[usize]) -> Result<f64> {
    check_dim(head, feats)?;
    check_labels(feats, labels, head.n_classes())?;
    if feats.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = feats
        .iter_rows()
        .zip(labels)
        .map(|(f, &y)| optim::cross_entropy(&head.predict_one(f), y))
        .sum();
    Ok(total / feats.rows() as f64)
}

/// Loss and its gradient with respect to [`LinearHead::params`].
///
/// With `p = softmax(W f + b)` and one-hot `y`, each row contributes
/// `(p - y) f^T / R` to `dW` and `(p - y) / R` to `db`.
pub fn head_loss_grad(
    head: &LinearHead,
    feats: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_dim(head, feats)?;
    check_labels(feats, labels, head.n_classes())?;
    let (n, e) = (head.n_classes(), head.dim());
    let mut grad = vec![0.0; head.n_params()];
    if feats.rows() == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / feats.rows() as f64;
    let mut loss = 0.0;
    for (f, &y) in feats.iter_rows().zip(labels) {
        let mut p = head.predict_one(f);
        loss += optim::cross_entropy(&p, y);
        if p[y] < optim::LOG_FLOOR {
            // the floored log is constant here, so the row adds no gradient
            continue;
        }
        p[y] -= 1.0;
        for (c, &r) in p.iter().enumerate() {
            let r = r * scale;
            for (g, &x) in grad[c * e..(c + 1) * e].iter_mut().zip(f) {
                *g += r * x;
            }
            grad[n * e + c] += r;
        }
    }
    Ok((loss * scale, grad))
}

/// Support features extended with within-class convex combinations.
///
/// Rows are all original rows (unchanged, in their original order) followed
/// by the synthesized rows, class by class.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSupport {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Number of leading rows that are original support rows.
    pub n_original: usize,
}

/// Adds `n_aug` mixup rows per class: `lambda * f_a + (1 - lambda) * f_b` with
/// `lambda ~ U(0, 1)` and `f_a`, `f_b` two distinct support rows of the class
/// (the same row when the class has only one).
pub fn manifold_augment<R: Rng + ?Sized>(
    support: &Matrix,
    labels: &[usize],
    n_classes: usize,
    n_aug: usize,
    rng: &mut R,
) -> Result<AugmentedSupport> {
    check_labels(support, labels, n_classes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (row, &l) in labels.iter().enumerate() {
        by_class[l].push(row);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c));
    }

    let e = support.cols();
    let extra = n_classes * n_aug;
    let mut data = Vec::with_capacity((support.rows() + extra) * e);
    data.extend_from_slice(support.as_slice());
    let mut out_labels = Vec::with_capacity(support.rows() + extra);
    out_labels.extend_from_slice(labels);

    for (class, rows) in by_class.iter().enumerate() {
        for _ in 0..n_aug {
            let a = rows[rng.random_range(0..rows.len())];
            let b = if rows.len() == 1 {
                a
            } else {
                // uniform over the other rows of the class
                let mut pick = rng.random_range(0..rows.len() - 1);
                if rows[pick] == a {
                    pick = rows.len() - 1;
                }
                rows[pick]
            };
            let lambda: f64 = rng.random();
            data.extend(
                support
                    .row(a)
                    .iter()
                    .zip(support.row(b))
                    .map(|(x, y)| lambda * x + (1.0 - lambda) * y),
            );
            out_labels.push(class);
        }
    }
    Ok(AugmentedSupport {
        features: Matrix::from_vec(support.rows() + extra, e, data)?,
        labels: out_labels,
        n_original: support.rows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Mixup rows added per class.
    pub n_aug: usize,
    pub init_std: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 11,
            lr: 1e-2,
            n_aug: 5,
            init_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTraining {
    pub head: LinearHead,
    /// Loss before each epoch's update, followed by the final loss.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on the mean cross-entropy of `aug`.
pub fn train_head<R: Rng + ?Sized>(
    aug: &AugmentedSupport,
    n_classes: usize,
    config: &HeadConfig,
    rng: &mut R,
    diag: &mut Diagnostics,
) -> Result<HeadTraining> {
    if aug.features.rows() == 0 {
        return Err(Error::CountMismatch {
            what: "training rows",
            expected: 1,
            actual: 0,
        });
    }
    if config.epochs == 0 {
        return Err(Error::out_of_range("head epochs", 0.0, ">= 1"));
    }
    let mut head = LinearHead::random(n_classes, aug.features.cols(), config.init_std, rng);
    let mut params = head.params();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), params.len());
    let mut losses = Vec::with_capacity(config.epochs + 1);

    for epoch in 0..config.epochs {
        let (loss, grad) = head_loss_grad(&head, &aug.features, &aug.labels)?;
        record_loss(&mut losses, loss, epoch, diag)?;
        adam.update(&mut params, &grad)?;
        head.set_params(&params)?;
    }
    let final_loss = head_loss(&head, &aug.features, &aug.labels)?;
    record_loss(&mut losses, final_loss, config.epochs, diag)?;
    if !head.is_finite() {
        return Err(Error::Diverged {
            phase: "head",
            epoch: config.epochs,
        });
    }
    Ok(HeadTraining { head, losses })
}

fn record_loss(
    losses: &mut Vec<f64>,
    loss: f64,
    epoch: usize,
    diag: &mut Diagnostics,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            phase: "head",
            epoch,
        });
    }
    if losses
        .last()
        .is_some_and(|&prev| loss > prev + HEAD_MONOTONE_SLACK)
    {
        diag.head_loss_increases += 1;
    }
    losses.push(loss);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::grad_check;
    use crate::rng::TaskRng;
    use rand::SeedableRng;

    fn random_matrix(rng: &mut TaskRng, rows: usize, cols: usize, scale: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn predict_examples() {
        let feats = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]]).unwrap();
        let p = head_predict(&LinearHead::zeros(4, 3), &feats).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let head =
            LinearHead::new(Matrix::zeros(2, 3), vec![core::f64::consts::LN_2, 0.0]).unwrap();
        let p = head_predict(&head, &feats).unwrap();
        for row in p.iter_rows() {
            assert!((row[0] - 2.0 / 3.0).abs() < 1e-15 && (row[1] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(head_predict(&head, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn predict_matches_direct_formula() {
        let mut rng = TaskRng::seed_from_u64(4);
        let head =
            LinearHead::new(random_matrix(&mut rng, 3, 5, 1.0), vec![0.1, -0.2, 0.3]).unwrap();
        let feats = random_matrix(&mut rng, 4, 5, 1.0);
        let p = head_predict(&head, &feats).unwrap();
        for i in 0..4 {
            let z: Vec<f64> = (0..3)
                .map(|c| {
                    (0..5)
                        .map(|d| head.weights[(c, d)] * feats[(i, d)])
                        .sum::<f64>()
                        + head.bias[c]
                })
                .collect();
            let total: f64 = z.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                assert!((p[(i, c)] - z[c].exp() / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn augment_zero_is_identity() {
        let support = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let aug =
            manifold_augment(&support, &[0, 1], 2, 0, &mut TaskRng::seed_from_u64(0)).unwrap();
        assert_eq!(aug.features, support);
        assert_eq!(aug.labels, vec![0, 1]);
    }

    #[test]
    fn augment_single_shot_duplicates() {
        let support = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let aug =
            manifold_augment(&support, &[0, 1], 2, 3, &mut TaskRng::seed_from_u64(1)).unwrap();
        assert_eq!(aug.features.rows(), 8);
        for (row, &l) in aug.features.iter_rows().zip(&aug.labels).skip(2) {
            assert_eq!(row, support.row(l));
        }
    }

    /// Distance from each mixed row to the segment between the two support
    /// rows of its class, by projection.
    #[test]
    fn augment_two_shot_stays_on_segment() {
        let mut rng = TaskRng::seed_from_u64(2);
        let support = random_matrix(&mut rng, 4, 6, 3.0);
        let labels = [0, 0, 1, 1];
        let aug = manifold_augment(&support, &labels, 2, 100, &mut rng).unwrap();
        assert_eq!(aug.features.rows(), 204);
        assert_eq!(aug.features.slice_rows(0..4), support);
        let mut worst = 0.0f64;
        for (row, &l) in aug.features.iter_rows().zip(&aug.labels).skip(4) {
            let (a, b) = (support.row(2 * l), support.row(2 * l + 1));
            let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            let ap: Vec<f64> = row.iter().zip(a).map(|(x, y)| x - y).collect();
            let t = (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>()
                / ab.iter().map(|x| x * x).sum::<f64>())
            .clamp(0.0, 1.0);
            let d = ap
                .iter()
                .zip(&ab)
                .map(|(p, d)| (p - t * d).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn augment_rejects_missing_class() {
        let support = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            manifold_augment(&support, &[0, 0], 2, 1, &mut TaskRng::seed_from_u64(0)),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn head_gradient_passes_grad_check() {
        let mut rng = TaskRng::seed_from_u64(77);
        for _ in 0..50 {
            let head = LinearHead::new(
                random_matrix(&mut rng, 5, 16, 0.5),
                (0..5).map(|_| rng.sample(StandardNormal)).collect(),
            )
            .unwrap();
            let feats = random_matrix(&mut rng, 15, 16, 1.0);
            let labels: Vec<usize> = (0..15).map(|i| i % 5).collect();
            let err = grad_check(
                |p| {
                    let mut h = head.clone();
                    h.set_params(p).unwrap();
                    head_loss(&h, &feats, &labels).unwrap()
                },
                |p| {
                    let mut h = head.clone();
                    h.set_params(p).unwrap();
                    head_loss_grad(&h, &feats, &labels).unwrap().1
                },
                &head.params(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn separable_classes_reach_full_training_accuracy() {
        let mut rng = TaskRng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, sign) in [(0usize, 1.0), (1, -1.0)] {
            for _ in 0..5 {
                let mut f = vec![0.0; 8];
                f[0] = 10.0 * sign;
                for x in &mut f[1..] {
                    *x = 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
                rows.push(f);
                labels.push(c);
            }
        }
        let support = Matrix::from_rows(&rows).unwrap();
        let aug = manifold_augment(&support, &labels, 2, 5, &mut rng).unwrap();
        let mut d = Diagnostics::default();
        let trained = train_head(&aug, 2, &HeadConfig::default(), &mut rng, &mut d).unwrap();
        let p = head_predict(&trained.head, &aug.features).unwrap();
        for (row, &y) in p.iter_rows().zip(&aug.labels) {
            let pred = if row[0] >= row[1] { 0 } else { 1 };
            assert_eq!(pred, y);
        }
        assert_eq!(trained.losses.len(), 12);
        assert!(d.is_clean());
    }

    #[test]
    fn indistinguishable_inputs_keep_irreducible_loss() {
        let support = Matrix::from_rows(&vec![vec![1.0, -2.0, 0.5]; 10]).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let mut rng = TaskRng::seed_from_u64(6);
        let aug = manifold_augment(&support, &labels, 5, 5, &mut rng).unwrap();
        let trained = train_head(
            &aug,
            5,
            &HeadConfig::default(),
            &mut rng,
            &mut Diagnostics::default(),
        )
        .unwrap();
        assert!(trained.losses.iter().all(|&l| l >= 5f64.ln() - 1e-3));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = TaskRng::seed_from_u64(9);
        let support = random_matrix(&mut rng, 6, 4, 1.0);
        let labels = [0, 0, 1, 1, 2, 2];
        let run = || {
            let mut rng = TaskRng::seed_from_u64(10);
            let aug = manifold_augment(&support, &labels, 3, 5, &mut rng).unwrap();
            train_head(
                &aug,
                3,
                &HeadConfig::default(),
                &mut rng,
                &mut Diagnostics::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    /// Singletons at mutually orthogonal positions with norm >= 5.
    #[test]
    fn orthogonal_singletons_classified() {
        for n in 2..6 {
            let mut rows = Vec::new();
            for c in 0..n {
                let mut f = vec![0.0; n + 2];
                f[c] = 5.0 + c as f64;
                rows.push(f);
            }
            let support = Matrix::from_rows(&rows).unwrap();
            let labels: Vec<usize> = (0..n).collect();
            let mut rng = TaskRng::seed_from_u64(n as u64);
            let aug = manifold_augment(&support, &labels, n, 5, &mut rng).unwrap();
            let head = train_head(
                &aug,
                n,
                &HeadConfig::default(),
                &mut rng,
                &mut Diagnostics::default(),
            )
            .unwrap()
            .head;
            let p = head_predict(&head, &support).unwrap();
            for (c, row) in p.iter_rows().enumerate() {
                let best = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                assert_eq!(best, c);
            }
        }
    }

    #[test]
    fn train_rejects_bad_config() {
        let support = Matrix::from_rows(&[[1.0]]).unwrap();
        let aug = manifold_augment(&support, &[0], 1, 0, &mut TaskRng::seed_from_u64(0)).unwrap();
        let cfg = HeadConfig {
            epochs: 0,
            ..HeadConfig::default()
        };
        assert!(train_head(
            &aug,
            1,
            &cfg,
            &mut TaskRng::seed_from_u64(0),
            &mut Diagnostics::default()
        )
        .is_err());
        let cfg = HeadConfig {
            lr: f64::NAN,
            ..HeadConfig::default()
        };
        assert!(matches!(
            train_head(
                &aug,
                1,
                &cfg,
                &mut TaskRng::seed_from_u64(0),
                &mut Diagnostics::default()
            ),
            Err(Error::Diverged { phase: "head", .. })
        ));
    }
}
