//! Softmax, cross-entropy, Adam and a central-difference gradient checker.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn logsumexp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + math::ln(z.iter().map(|&x| math::exp(x - max)).sum::<f64>())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = math::exp(*x - max);
        total += *x;
    }
    for x in z.iter_mut() {
        *x /= total;
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = logsumexp(z);
    z.iter().map(|&x| x - lse).collect()
}

/// `-ln(pred[class])` with the probability floored at [`LOG_FLOOR`]. NaN
/// propagates.
pub fn cross_entropy(pred: &[f64], class: usize) -> f64 {
    let p = pred[class];
    if p.is_nan() {
        return f64::NAN;
    }
    -math::ln(p.max(LOG_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam step, updating `param` in place.
    pub fn update(&mut self, param: &mut [f64], grad: &[f64]) -> Result<()> {
        for len in [param.len(), grad.len()] {
            if len != self.m.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.m.len(),
                    actual: len,
                });
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = 1.0 - math::powi(beta1, t);
        let bc2 = 1.0 - math::powi(beta2, t);
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_update(
    state: &AdamState,
    param: &[f64],
    grad: &[f64],
) -> Result<(AdamState, Vec<f64>)> {
    let mut state = state.clone();
    let mut param = param.to_vec();
    state.update(&mut param, grad)?;
    Ok((state, param))
}

/// Denominator floor of [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares `grad(x)` against central differences
/// `(loss(x + h e_i) - loss(x - h e_i)) / 2h` and returns the worst
/// per-coordinate relative error `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn grad_check<L, G>(mut loss: L, grad: G, x: &[f64], h: f64) -> Result<f64>
where
    L: FnMut(&[f64]) -> f64,
    G: FnOnce(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::out_of_range("h", h, "> 0"));
    }
    let analytic = grad(x);
    if analytic.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: analytic.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = loss(&probe);
        probe[i] = x[i] - h;
        let down = loss(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite {
                context: "grad_check loss",
                index: i,
            });
        }
        let numeric = (up - down) / (2.0 * h);
        if !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check gradient",
                index: i,
            });
        }
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TaskRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[core::f64::consts::LN_2, 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let p = softmax(&z);
        for (lp, p) in log_softmax(&z).iter().zip(&p) {
            assert!((lp - p.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1), 0.0);
        assert!((cross_entropy(&[0.2; 5], 3) - 5f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1) - (-LOG_FLOOR.ln())).abs() < 1e-9);
        let mut rng = TaskRng::seed_from_u64(1);
        let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let pred: Vec<f64> = raw.iter().map(|x| x / total).collect();
        for c in 0..6 {
            assert!((cross_entropy(&pred, c) + pred[c].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut st = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        st.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut st = AdamState::new(cfg, 3);
        let mut p = vec![0.0; 3];
        st.update(&mut p, &[3.0, -0.5, 1e-2]).unwrap();
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - s * 0.01).abs() < 1e-7, "{x}");
        }
        assert!(st.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), 2);
        assert!(st.update(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(st.update(&mut [0.0; 2], &[0.0; 1]).is_err());
        assert_eq!(st.step(), 0);
    }

    /// Reference recurrence written out per coordinate, independent of
    /// `AdamState`.
    fn scalar_adam(x0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn adam_minimizes_squared_norm() {
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), 2);
        let mut x = vec![1.0, 1.0];
        for _ in 0..100 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            st.update(&mut x, &g).unwrap();
        }
        let reference = scalar_adam(1.0, 0.1, 100);
        for v in &x {
            assert!((v - reference).abs() < 1e-12);
        }
        assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1);
    }

    #[test]
    fn adam_update_functional_form() {
        let st = AdamState::new(AdamConfig::default(), 2);
        let (a, pa) = adam_update(&st, &[1.0, 2.0], &[0.5, -0.5]).unwrap();
        let (b, pb) = adam_update(&st, &[1.0, 2.0], &[0.5, -0.5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn grad_check_exact_gradient() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let err = grad_check(
            |x| x.iter().map(|v| v * v).sum(),
            |x| x.iter().map(|v| 2.0 * v).collect(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let err = grad_check(
            |x| x.iter().map(|v| v * v).sum(),
            |x| x.iter().map(|v| 4.0 * v).collect(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((err - 1.0).abs() < 1e-4, "{err}");
    }

    #[test]
    fn grad_check_rejects_non_finite_loss() {
        let r = grad_check(|x| (x[0]).ln(), |_| vec![1.0], &[0.0], 1e-3);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        assert!(grad_check(|_| 0.0, |_| vec![0.0], &[0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(z in proptest::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
            let p = softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let q = softmax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
