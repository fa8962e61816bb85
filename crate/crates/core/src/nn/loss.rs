//! Softmax cross-entropy with an optional additive logit shift or per-class
//! weights.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math;

/// Modifiers for the training loss. At most one of the two is set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossConfig {
    /// Added to every logit row before the softmax.
    pub shift: Option<Vec<f64>>,
    /// Multiplies each sample's loss by the weight of its label.
    pub class_weights: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn shifted(shift: Vec<f64>) -> Self {
        Self {
            shift: Some(shift),
            class_weights: None,
        }
    }

    pub fn weighted(class_weights: Vec<f64>) -> Self {
        Self {
            shift: None,
            class_weights: Some(class_weights),
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.shift.is_some() && self.class_weights.is_some() {
            return Err(Error::Config(
                "a loss cannot combine a logit shift with class weights".into(),
            ));
        }
        if let Some(s) = &self.shift {
            check_dim("logit shift", num_classes, s.len())?;
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::Config("logit shift must be finite".into()));
            }
        }
        if let Some(w) = &self.class_weights {
            check_dim("class weights", num_classes, w.len())?;
            if !w.iter().all(|&v| v.is_finite() && v > 0.0) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean over the batch of `weight[y] * CE(softmax(logits + shift), y)` and
/// its gradient with respect to the (unshifted) logits.
///
/// The shift is a constant offset, so the gradient with respect to `logits`
/// equals the gradient with respect to `logits + shift`.
pub fn shifted_softmax_ce(
    logits: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, Matrix)> {
    let k = logits.cols();
    cfg.validate(k)?;
    check_dim("loss labels", logits.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Config("loss needs at least one sample".into()));
    }
    let n = labels.len() as f64;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Config(alloc::format!(
                "label {y} out of range for {k} classes"
            )));
        }
        let row = grad.row_mut(r);
        if let Some(s) = &cfg.shift {
            row.iter_mut().zip(s).for_each(|(z, sv)| *z += sv);
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        let shifted_y = logits[(r, y)] + cfg.shift.as_ref().map_or(0.0, |s| s[y]);
        // lse >= max >= shifted_y, so the loss is never negative
        let sample_loss = (max + math::ln(sum)) - shifted_y;
        let w = cfg.class_weights.as_ref().map_or(1.0, |cw| cw[y]);
        total += w * sample_loss;
        let scale = w / n;
        for v in row.iter_mut() {
            *v = *v / sum * scale;
        }
        row[y] -= scale;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::LN_2;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let (loss, _) =
            shifted_softmax_ce(&m(&[&[0.0, 0.0]]), &[0], &LossConfig::default()).unwrap();
        assert!((loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn ln2_shift_gives_two_thirds() {
        let cfg = LossConfig::shifted(vec![LN_2, 0.0]);
        let (loss, grad) = shifted_softmax_ce(&m(&[&[0.0, 0.0]]), &[0], &cfg).unwrap();
        assert!((loss + crate::math::ln(2.0 / 3.0)).abs() < 1e-15);
        assert!((grad[(0, 0)] - (2.0 / 3.0 - 1.0)).abs() < 1e-15);
        assert!((grad[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_shift_is_bit_identical_to_no_shift() {
        let logits = m(&[&[0.3, -1.2, 2.0], &[-0.0, 0.0, 5.5]]);
        let plain = shifted_softmax_ce(&logits, &[2, 0], &LossConfig::default()).unwrap();
        let zero =
            shifted_softmax_ce(&logits, &[2, 0], &LossConfig::shifted(vec![0.0; 3])).unwrap();
        assert_eq!(plain.0.to_bits(), zero.0.to_bits());
        for (a, b) in plain.1.as_slice().iter().zip(zero.1.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn class_weights_scale_each_sample() {
        let logits = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (plain, _) = shifted_softmax_ce(&logits, &[0, 0], &LossConfig::default()).unwrap();
        let (weighted, _) =
            shifted_softmax_ce(&logits, &[0, 0], &LossConfig::weighted(vec![3.0, 1.0])).unwrap();
        assert!((weighted - 3.0 * plain).abs() < 1e-14);
    }

    #[test]
    fn rejects_invalid_configs() {
        let logits = m(&[&[0.0, 0.0]]);
        let both = LossConfig {
            shift: Some(vec![0.0, 0.0]),
            class_weights: Some(vec![1.0, 1.0]),
        };
        assert!(shifted_softmax_ce(&logits, &[0], &both).is_err());
        assert!(shifted_softmax_ce(&logits, &[0], &LossConfig::shifted(vec![0.0])).is_err());
        assert!(shifted_softmax_ce(&logits, &[0], &LossConfig::weighted(vec![1.0, 0.0])).is_err());
        assert!(shifted_softmax_ce(&logits, &[2], &LossConfig::default()).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, grad) =
            shifted_softmax_ce(&m(&[&[1000.0, -1000.0]]), &[1], &LossConfig::default()).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(grad.as_slice().iter().all(|g| g.is_finite()));
    }
}
