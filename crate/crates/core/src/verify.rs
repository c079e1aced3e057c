//! Finite-difference checks of every analytic gradient used in training.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::headcls::{head_loss, head_loss_grad, LinearHead};
use crate::linalg::Matrix;
use crate::optim::grad_check;
use crate::prototrain::{loss_total, loss_total_grad, LossWeights};
use crate::rng::TaskRng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckConfig {
    pub trials: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Support rows per class.
    pub shots: usize,
    /// Extra random `(lambda, delta)` pairs checked besides the defaults.
    pub extra_weights: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            n_classes: 5,
            dim: 16,
            shots: 5,
            extra_weights: 5,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightsResult {
    pub weights: LossWeights,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub trials: usize,
    pub tolerance: f64,
    /// Worst relative error of the head cross-entropy gradient.
    pub head_worst: f64,
    /// Worst relative error of the prototype loss gradient, per weight pair.
    pub total: Vec<WeightsResult>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.total
            .iter()
            .map(|w| w.worst)
            .fold(self.head_worst, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data length")
}

/// Checks the head and prototype-loss gradients on `trials` random instances.
pub fn run_grad_checks(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let (n, e) = (config.n_classes, config.dim);
    let mut rng = TaskRng::seed_from_u64(config.seed);
    let mut weights = Vec::with_capacity(config.extra_weights + 1);
    weights.push(LossWeights::default());
    for _ in 0..config.extra_weights {
        weights.push(LossWeights {
            lambda: rng.random_range(0.0..2.0),
            delta: rng.random_range(0.0..2.0),
        });
    }
    let mut total: Vec<WeightsResult> = weights
        .iter()
        .map(|&w| WeightsResult {
            weights: w,
            worst: 0.0,
        })
        .collect();
    let mut head_worst: f64 = 0.0;
    let labels: Vec<usize> = (0..n * config.shots).map(|i| i / config.shots).collect();

    for _ in 0..config.trials {
        let feats = gaussian_matrix(&mut rng, n * config.shots, e, 1.0);
        let bias = (0..n)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let head = LinearHead::new(gaussian_matrix(&mut rng, n, e, 0.3), bias)?;
        let protos = gaussian_matrix(&mut rng, n, e, 1.0);

        let mut probe = head.clone();
        let err = grad_check(
            |x| {
                probe.set_params(x).expect("parameter count is fixed");
                head_loss(&probe, &feats, &labels).expect("shapes are fixed")
            },
            |x| {
                let mut h = head.clone();
                h.set_params(x).expect("parameter count is fixed");
                head_loss_grad(&h, &feats, &labels)
                    .expect("shapes are fixed")
                    .1
            },
            &head.params(),
            config.step,
        )?;
        head_worst = head_worst.max(err);

        for slot in &mut total {
            let w = slot.weights;
            let as_protos = |x: &[f64]| Matrix::from_vec(n, e, x.to_vec()).expect("shape is fixed");
            let err = grad_check(
                |x| {
                    loss_total(&as_protos(x), &head, &feats, &labels, &w).expect("shapes are fixed")
                },
                |x| {
                    loss_total_grad(&as_protos(x), &head, &feats, &labels, &w)
                        .expect("shapes are fixed")
                        .grad
                        .into_vec()
                },
                protos.as_slice(),
                config.step,
            )?;
            slot.worst = slot.worst.max(err);
        }
    }
    Ok(GradCheckReport {
        trials: config.trials,
        tolerance: config.tolerance,
        head_worst,
        total,
    })
}
