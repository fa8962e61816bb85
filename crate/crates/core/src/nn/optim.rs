//! SGD with momentum and coupled (L2) weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdHyper {
    pub fn plain(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Momentum buffer plus the hyperparameters that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub buffer: Vec<f64>,
    pub hyper: SgdHyper,
}

impl OptState {
    pub fn new(len: usize, hyper: SgdHyper) -> Self {
        Self {
            buffer: vec![0.0; len],
            hyper,
        }
    }

    /// In-place step:
    /// `buffer = momentum * buffer + (grad + weight_decay * params)`,
    /// `params -= learning_rate * buffer`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("optimizer gradient", params.len(), grad.len())?;
        check_dim("momentum buffer", params.len(), self.buffer.len())?;
        let SgdHyper {
            learning_rate,
            momentum,
            weight_decay,
        } = self.hyper;
        for ((p, b), &g) in params.iter_mut().zip(self.buffer.iter_mut()).zip(grad) {
            let d = if weight_decay != 0.0 {
                g + weight_decay * *p
            } else {
                g
            };
            *b = momentum * *b + d;
            *p -= learning_rate * *b;
        }
        Ok(())
    }
}

/// Pure form of [`OptState::apply`].
pub fn sgd_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &OptState,
) -> Result<(ParamVector, OptState)> {
    let mut next = params.clone();
    let mut st = state.clone();
    st.apply(&mut next, grad)?;
    if !next.is_finite() {
        return Err(Error::NonFinite("sgd step"));
    }
    Ok((next, st))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_hyper_is_plain_sgd() {
        let p = ParamVector::from(vec![1.0, -2.0]);
        let g = ParamVector::from(vec![0.5, 0.25]);
        let st = OptState::new(2, SgdHyper::plain(0.1));
        let (next, _) = sgd_step(&p, &g, &st).unwrap();
        assert_eq!(&*next, &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p = ParamVector::from(vec![3.0, 4.0]);
        let st = OptState::new(
            2,
            SgdHyper {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
        );
        let (next, st2) = sgd_step(&p, &ParamVector::zeros(2), &st).unwrap();
        assert_eq!(next, p);
        assert_eq!(st2.buffer, vec![0.0, 0.0]);
    }

    #[test]
    fn two_momentum_steps_displace_by_2_9_eta_g() {
        let eta = 0.05;
        let g = ParamVector::from(vec![1.0, -3.0]);
        let p0 = ParamVector::from(vec![0.0, 0.0]);
        let st = OptState::new(
            2,
            SgdHyper {
                learning_rate: eta,
                momentum: 0.9,
                weight_decay: 0.0,
            },
        );
        let (p1, st) = sgd_step(&p0, &g, &st).unwrap();
        let (p2, _) = sgd_step(&p1, &g, &st).unwrap();
        for (x, gv) in p2.iter().zip(g.iter()) {
            assert!((x - (-eta * gv * 2.9)).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_decay_is_added_to_gradient() {
        let p = ParamVector::from(vec![2.0]);
        let st = OptState::new(
            1,
            SgdHyper {
                learning_rate: 0.5,
                momentum: 0.0,
                weight_decay: 0.1,
            },
        );
        let (next, _) = sgd_step(&p, &ParamVector::zeros(1), &st).unwrap();
        assert!((next[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let st = OptState::new(2, SgdHyper::plain(0.1));
        assert!(sgd_step(&ParamVector::zeros(2), &ParamVector::zeros(3), &st).is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(SgdHyper::plain(0.0).validate().is_err());
        assert!(SgdHyper {
            momentum: 1.0,
            ..SgdHyper::default()
        }
        .validate()
        .is_err());
        assert!(SgdHyper::default().validate().is_ok());
    }
}
