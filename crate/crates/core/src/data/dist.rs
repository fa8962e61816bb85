use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;

const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over the `K` classes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct LabelDist(Vec<f64>);

impl LabelDist {
    /// Validates non-negativity and normalization (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Distribution("need at least two classes".into()));
        }
        if !probs.iter().all(|&p| p.is_finite() && p >= 0.0) {
            return Err(Error::Distribution(
                "entries must be finite and >= 0".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(alloc::format!(
                "entries sum to {sum}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(alloc::vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    pub fn total_variation(&self, other: &LabelDist) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Classifier shift `s_k = ln(P_i(k) / P(k))`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ShiftVector(Vec<f64>);

impl ShiftVector {
    pub fn zeros(k: usize) -> Self {
        Self(alloc::vec![0.0; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<Vec<f64>> for ShiftVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Add-one (Laplace) smoothed class frequencies:
/// `(count_k + 1) / (n + K)`.
pub fn estimate_label_dist(labels: &[usize], num_classes: usize) -> Result<LabelDist> {
    if num_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let mut counts = alloc::vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::Config(alloc::format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        counts[y] += 1;
    }
    let denom = (labels.len() + num_classes) as f64;
    Ok(LabelDist(
        counts.into_iter().map(|c| (c + 1) as f64 / denom).collect(),
    ))
}

pub fn compute_shift(local: &LabelDist, global: &LabelDist) -> Result<ShiftVector> {
    check_dim(
        "shift distributions",
        local.num_classes(),
        global.num_classes(),
    )?;
    if !local.is_strictly_positive() || !global.is_strictly_positive() {
        return Err(Error::Precondition(
            "shift needs strictly positive distributions (apply smoothing first)".into(),
        ));
    }
    Ok(ShiftVector(
        local
            .probs()
            .iter()
            .zip(global.probs())
            .map(|(&p, &q)| math::ln(p / q))
            .collect(),
    ))
}
