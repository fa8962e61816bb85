//! Dense ReLU networks with exact backpropagation.
//!
//! Parameters live in one flat [`ParamVector`] so that aggregation, proximal
//! terms and control variates are plain vector arithmetic. Layer `l` occupies
//! a contiguous block: its weight matrix (row-major, `out x in`) followed by
//! its bias vector.

mod loss;
mod optim;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng::{rng_for, stream};

pub use loss::{shifted_softmax_ce, softmax_rows, LossConfig};
pub use optim::{sgd_step, OptState, SgdHyper};

/// Flat model parameters `w`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Activation used by every hidden layer. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Relu,
}

/// Shape of a dense classifier. An empty `hidden_dims` gives multinomial
/// logistic regression.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    #[inline]
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    #[inline]
    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &params[start..start + self.fan_out]
    }

    #[inline]
    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn logistic(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::len).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut params = vec![0.0; self.param_count()];
        for layer in self.layers() {
            let limit = math::sqrt(6.0 / (layer.fan_in + layer.fan_out) as f64);
            let end = layer.offset + layer.fan_in * layer.fan_out;
            for w in &mut params[layer.offset..end] {
                *w = rng.random_range(-limit..limit);
            }
        }
        ParamVector(params)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_count(), params.len())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        check_dim("input width", self.input_dim, inputs.cols())
    }
}

/// A mini-batch: one input row per sample plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config(
                "batch must contain at least one sample".into(),
            ));
        }
        check_dim("batch labels", inputs.rows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Config(alloc::format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `out = inputs * W^T + b` for one layer.
fn affine(layer: &LayerShape, params: &[f64], inputs: &Matrix) -> Matrix {
    let w = layer.weights(params);
    let b = layer.bias(params);
    let mut out = Matrix::zeros(inputs.rows(), layer.fan_out);
    for r in 0..inputs.rows() {
        let x = inputs.row(r);
        for (o, (ob, wrow)) in out
            .row_mut(r)
            .iter_mut()
            .zip(b.iter().zip(w.chunks_exact(layer.fan_in)))
        {
            *o = ob + crate::linalg::dot(wrow, x);
        }
    }
    out
}

/// Hidden activations (post-ReLU) for every hidden layer plus the logits.
fn forward_trace(arch: &Architecture, params: &[f64], inputs: &Matrix) -> (Vec<Matrix>, Matrix) {
    let layers = arch.layers();
    let (last, hidden) = layers.split_last().expect("at least one layer");
    let mut acts: Vec<Matrix> = Vec::with_capacity(hidden.len());
    for layer in hidden {
        let input = acts.last().unwrap_or(inputs);
        let mut h = affine(layer, params, input);
        h.as_mut_slice().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        });
        acts.push(h);
    }
    let logits = affine(last, params, acts.last().unwrap_or(inputs));
    (acts, logits)
}

/// Raw (unshifted) logits, one row per input.
pub fn forward(params: &[f64], arch: &Architecture, inputs: &Matrix) -> Result<Matrix> {
    arch.check_params(params)?;
    arch.check_inputs(inputs)?;
    let (_, logits) = forward_trace(arch, params, inputs);
    if !logits.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward"));
    }
    Ok(logits)
}

/// Class posteriors from raw logits. The training-time shift is never applied
/// here: evaluation always uses the unshifted model.
pub fn predict_posterior(params: &[f64], arch: &Architecture, inputs: &Matrix) -> Result<Matrix> {
    let logits = forward(params, arch, inputs)?;
    Ok(softmax_rows(&logits))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Mean batch loss and its exact gradient with respect to the parameters.
pub fn loss_and_grad(
    params: &[f64],
    arch: &Architecture,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<(f64, ParamVector)> {
    arch.check_params(params)?;
    arch.check_inputs(&batch.inputs)?;
    let layers = arch.layers();
    let (acts, logits) = forward_trace(arch, params, &batch.inputs);
    let (loss, mut delta) = shifted_softmax_ce(&logits, &batch.labels, cfg)?;

    let mut grad = vec![0.0; params.len()];
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = if l == 0 { &batch.inputs } else { &acts[l - 1] };
        let wlen = layer.fan_in * layer.fan_out;
        let (gw, rest) = grad[layer.offset..].split_at_mut(wlen);
        let gb = &mut rest[..layer.fan_out];
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let x = input.row(r);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                for (g, &xv) in gw[o * layer.fan_in..(o + 1) * layer.fan_in]
                    .iter_mut()
                    .zip(x)
                {
                    *g += dv * xv;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Backpropagate through W and the ReLU of the previous layer.
        let w = layer.weights(params);
        let mut prev = Matrix::zeros(delta.rows(), layer.fan_in);
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let h = input.row(r);
            let p = prev.row_mut(r);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (pv, &wv) in p
                    .iter_mut()
                    .zip(&w[o * layer.fan_in..(o + 1) * layer.fan_in])
                {
                    *pv += dv * wv;
                }
            }
            for (pv, &hv) in p.iter_mut().zip(h) {
                if hv <= 0.0 {
                    *pv = 0.0;
                }
            }
        }
        delta = prev;
    }
    if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((loss, ParamVector(grad)))
}

pub fn grad(
    params: &[f64],
    arch: &Architecture,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<ParamVector> {
    loss_and_grad(params, arch, batch, cfg).map(|(_, g)| g)
}

/// Mean loss without the gradient.
pub fn batch_loss(
    params: &[f64],
    arch: &Architecture,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<f64> {
    let logits = forward(params, arch, &batch.inputs)?;
    shifted_softmax_ce(&logits, &batch.labels, cfg).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(arch: &Architecture, params: &[f64], x: &[f64]) -> Vec<f64> {
        // Straight-line reimplementation: explicit index arithmetic per layer.
        let mut dims = vec![arch.input_dim];
        dims.extend(arch.hidden_dims.iter().copied());
        dims.push(arch.num_classes);
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let mut next = vec![0.0; fo];
            for o in 0..fo {
                let mut s = params[off + fi * fo + o];
                for i in 0..fi {
                    s += params[off + o * fi + i] * cur[i];
                }
                next[o] = if l + 2 < dims.len() && s < 0.0 {
                    0.0
                } else {
                    s
                };
            }
            off += fi * fo + fo;
            cur = next;
        }
        cur
    }

    #[test]
    fn param_count_follows_dims() {
        let arch = Architecture::new(4, vec![3, 5], 2).unwrap();
        assert_eq!(arch.param_count(), (4 * 3 + 3) + (3 * 5 + 5) + (5 * 2 + 2));
        assert_eq!(Architecture::logistic(2, 3).unwrap().param_count(), 9);
    }

    #[test]
    fn architecture_rejects_single_class() {
        assert!(matches!(
            Architecture::logistic(3, 1),
            Err(Error::Config(_))
        ));
        assert!(Architecture::new(3, vec![0], 2).is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let arch = Architecture::new(3, vec![4], 5).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]).unwrap();
        let logits = forward(&params, &arch, &x).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logistic_logits_are_weight_column_plus_bias() {
        let arch = Architecture::logistic(3, 2).unwrap();
        // rows of W: [1,2,3], [4,5,6]; bias [0.5, -0.5]
        let params = ParamVector::from(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5]);
        let e1 = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let logits = forward(&params, &arch, &e1).unwrap();
        assert_eq!(logits.row(0), &[1.5, 3.5]);
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let arch = Architecture::new(5, vec![7, 4], 3).unwrap();
        let mut rng = rng_for(5, &[]);
        for trial in 0..20 {
            let params: Vec<f64> = (0..arch.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let logits = forward(&params, &arch, &x).unwrap();
            for (r, row) in rows.iter().enumerate() {
                let expect = naive_forward(&arch, &params, row);
                for (a, b) in logits.row(r).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let arch = Architecture::logistic(3, 2).unwrap();
        let x = Matrix::zeros(1, 3);
        assert!(matches!(
            forward(&[0.0; 7], &arch, &x),
            Err(Error::Dimension { .. })
        ));
        let x = Matrix::zeros(1, 4);
        assert!(forward(&[0.0; 8], &arch, &x).is_err());
    }

    #[test]
    fn zero_weight_balanced_batch_has_zero_bias_gradient() {
        let arch = Architecture::logistic(2, 2).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let batch = Batch::new(x, vec![0, 1], 2).unwrap();
        let g = grad(&params, &arch, &batch, &LossConfig::default()).unwrap();
        assert_eq!(&g[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn posterior_rows_are_normalized_and_argmax_consistent() {
        let arch = Architecture::new(3, vec![6], 4).unwrap();
        let params = arch.init_params(9);
        let mut rng = rng_for(1, &[]);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let post = predict_posterior(&params, &arch, &x).unwrap();
        let logits = forward(&params, &arch, &x).unwrap();
        for r in 0..50 {
            let s: f64 = post.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert_eq!(argmax(post.row(r)), argmax(logits.row(r)));
        }
        let zero = ParamVector::zeros(arch.param_count());
        let uni = predict_posterior(&zero, &arch, &x).unwrap();
        assert!(uni.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Architecture::new(10, vec![20], 3).unwrap();
        let a = arch.init_params(1);
        assert_eq!(a, arch.init_params(1));
        assert_ne!(a, arch.init_params(2));
        let limit = math::sqrt(6.0 / 30.0);
        assert!(a[..200].iter().all(|w| w.abs() < limit));
        assert!(a[200..220].iter().all(|&b| b == 0.0));
    }
}
