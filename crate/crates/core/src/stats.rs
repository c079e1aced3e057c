//! Summary statistics over per-task accuracies.

use crate::error::{Error, Result};
use crate::math;

/// z-score of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::CountMismatch {
            what: "samples",
            expected: 1,
            actual: 0,
        });
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation (divides by `T`).
pub fn population_std(xs: &[f64]) -> Result<f64> {
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Ok(math::sqrt(var))
}

/// Half-width `1.96 * std / sqrt(T)` of the normal-approximation interval.
pub fn ci95(xs: &[f64]) -> Result<f64> {
    Ok(Z95 * population_std(xs)? / math::sqrt(xs.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    Ok(Summary {
        mean: mean(xs)?,
        ci95: ci95(xs)?,
        n: xs.len(),
    })
}
