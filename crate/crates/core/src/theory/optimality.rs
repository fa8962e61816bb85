//! Optimality of the shifted local objective under pure label shift.
//!
//! With shared class conditionals, the minimizer of the shifted cross-entropy
//! on client `i` has raw logits equal to the log of the global posterior (up
//! to a per-input constant). On a well-specified model (logistic regression
//! on Gaussian classes with equal covariance) this can be checked directly:
//! train each client's shifted and unshifted objectives to stationarity and
//! compare them with the Bayes posterior and with the centrally trained
//! model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{synth_label_shift, Dataset, GaussianClasses, LabelDist, SynthSpec};
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::nn::{self, Architecture, Batch, LossConfig, ParamVector};
use crate::server::global_statistics;
use crate::theory::report::{lower_margin, upper_margin, CheckReport, CheckStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalitySetup {
    pub classes: GaussianClasses,
    pub client_priors: Vec<LabelDist>,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Probe grid: `steps` points per axis on `[lo, hi]` in the first two
    /// input coordinates (others zero).
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_steps: usize,
    /// Shifted optima must reproduce the global posterior within this total
    /// variation on the grid.
    pub tv_tolerance: f64,
    /// Shifted optima must be within this test cross-entropy of the central
    /// optimum.
    pub ce_tolerance: f64,
    /// Unshifted optima must exceed the central test cross-entropy by at
    /// least this much.
    pub unshifted_min_gap: f64,
    /// Unshifted optima must miss the global posterior by at least this total
    /// variation somewhere on the grid.
    pub unshifted_min_tv: f64,
    pub grad_tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
}

/// Result of full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct GdOutcome {
    pub params: ParamVector,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent with step `1 / L`, where
/// `L = 1/2 * lambda_max(X~^T X~ / n)` bounds the softmax cross-entropy
/// curvature of a linear model on inputs `X~ = [X, 1]`.
pub fn train_logistic_full_batch(
    arch: &Architecture,
    batch: &Batch,
    cfg: &LossConfig,
    grad_tolerance: f64,
    max_iters: usize,
) -> Result<GdOutcome> {
    if !arch.hidden_dims.is_empty() {
        return Err(Error::Precondition(
            "step-size bound assumes a linear model".into(),
        ));
    }
    let step = 1.0 / logistic_smoothness(&batch.inputs)?;
    let mut w = ParamVector::zeros(arch.param_count());
    let mut grad_norm = f64::INFINITY;
    for it in 0..max_iters {
        let (_, g) = nn::loss_and_grad(&w, arch, batch, cfg)?;
        grad_norm = norm(&g);
        if grad_norm < grad_tolerance {
            return Ok(GdOutcome {
                params: w,
                grad_norm,
                iterations: it,
                converged: true,
            });
        }
        for (p, gv) in w.iter_mut().zip(g.iter()) {
            *p -= step * gv;
        }
    }
    Ok(GdOutcome {
        params: w,
        grad_norm,
        iterations: max_iters,
        converged: false,
    })
}

fn logistic_smoothness(inputs: &Matrix) -> Result<f64> {
    let n = inputs.rows();
    let d = inputs.cols() + 1;
    let mut gram = Matrix::zeros(d, d);
    for r in 0..n {
        let x = inputs.row(r);
        for i in 0..d {
            let xi = if i < d - 1 { x[i] } else { 1.0 };
            for j in 0..=i {
                let xj = if j < d - 1 { x[j] } else { 1.0 };
                gram[(i, j)] += xi * xj / n as f64;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    let eig = gram.symmetric_eigenvalues()?;
    Ok(0.5 * eig[d - 1])
}

fn probe_grid(setup: &OptimalitySetup, dim: usize) -> Result<Matrix> {
    let k = setup.grid_steps.max(2);
    let h = (setup.grid_hi - setup.grid_lo) / (k - 1) as f64;
    let mut rows = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let mut x = vec![0.0; dim];
            x[0] = setup.grid_lo + a as f64 * h;
            if dim > 1 {
                x[1] = setup.grid_lo + b as f64 * h;
            }
            rows.push(x);
        }
        if dim == 1 {
            break;
        }
    }
    Matrix::from_rows(&rows)
}

/// Max total variation between the model's raw posterior and the Bayes
/// posterior under `prior` over the probe grid.
fn max_tv(
    params: &[f64],
    arch: &Architecture,
    classes: &GaussianClasses,
    prior: &[f64],
    grid: &Matrix,
) -> Result<f64> {
    let post = nn::predict_posterior(params, arch, grid)?;
    let mut worst = 0.0f64;
    for r in 0..grid.rows() {
        let truth = classes.posterior(grid.row(r), prior);
        let tv = 0.5
            * post
                .row(r)
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        worst = worst.max(tv);
    }
    Ok(worst)
}

fn test_ce(params: &[f64], arch: &Architecture, test: &Dataset) -> Result<f64> {
    nn::batch_loss(params, arch, &test.full_batch()?, &LossConfig::default())
}

/// Trains shifted and unshifted local optima per client and the central
/// optimum on pooled data; reports posterior TV on the probe grid and the
/// global-test cross-entropy gaps.
pub fn verify_shift_optimality(setup: &OptimalitySetup) -> Result<CheckReport> {
    let spec = SynthSpec {
        classes: setup.classes.clone(),
        client_priors: setup.client_priors.clone(),
        samples_per_client: setup.samples_per_client,
        test_samples: setup.test_samples,
        seed: setup.seed,
    };
    let data = synth_label_shift(&spec)?;
    let arch = Architecture::logistic(setup.classes.input_dim(), setup.classes.num_classes())?;
    let (global_dist, shifts) = global_statistics(&data.shards, setup.seed)?;
    let grid = probe_grid(setup, arch.input_dim)?;
    let prior = data.global_prior.probs();

    let mut report = CheckReport::new("shifted_local_optimum");
    report.constant("tv_tolerance", setup.tv_tolerance);
    report.constant("ce_tolerance", setup.ce_tolerance);
    report.constant("unshifted_min_gap", setup.unshifted_min_gap);
    report.constant("unshifted_min_tv", setup.unshifted_min_tv);
    report.constant("samples_per_client", setup.samples_per_client as f64);
    report.constant("grad_tolerance", setup.grad_tolerance);
    for (k, p) in global_dist.probs().iter().enumerate() {
        report.detail(&format!("estimated_global_prior_{k}"), *p);
    }

    let pooled = Dataset::concat(data.shards.iter().map(|s| &s.data))?;
    let central = train_logistic_full_batch(
        &arch,
        &pooled.full_batch()?,
        &LossConfig::default(),
        setup.grad_tolerance,
        setup.max_iters,
    )?;
    let mut converged = central.converged;
    report.detail("central_grad_norm", central.grad_norm);
    let central_ce = test_ce(&central.params, &arch, &data.test)?;
    report.detail("central_test_ce", central_ce);
    report.detail(
        "central_tv",
        max_tv(&central.params, &arch, &setup.classes, prior, &grid)?,
    );

    let mut margin = f64::INFINITY;
    for (shard, shift) in data.shards.iter().zip(&shifts) {
        let i = shard.client_id;
        let batch = shard.data.full_batch()?;
        let shifted = train_logistic_full_batch(
            &arch,
            &batch,
            &LossConfig::shifted(shift.values().to_vec()),
            setup.grad_tolerance,
            setup.max_iters,
        )?;
        let plain = train_logistic_full_batch(
            &arch,
            &batch,
            &LossConfig::default(),
            setup.grad_tolerance,
            setup.max_iters,
        )?;
        converged &= shifted.converged && plain.converged;

        let s_tv = max_tv(&shifted.params, &arch, &setup.classes, prior, &grid)?;
        let u_tv = max_tv(&plain.params, &arch, &setup.classes, prior, &grid)?;
        let s_gap = test_ce(&shifted.params, &arch, &data.test)? - central_ce;
        let u_gap = test_ce(&plain.params, &arch, &data.test)? - central_ce;
        report.detail(&format!("client{i}_shifted_tv"), s_tv);
        report.detail(&format!("client{i}_unshifted_tv"), u_tv);
        report.detail(&format!("client{i}_shifted_ce_gap"), s_gap);
        report.detail(&format!("client{i}_unshifted_ce_gap"), u_gap);
        report.detail(&format!("client{i}_shifted_grad_norm"), shifted.grad_norm);
        report.detail(&format!("client{i}_unshifted_grad_norm"), plain.grad_norm);
        report.detail(
            &format!("client{i}_shifted_iterations"),
            shifted.iterations as f64,
        );

        margin = margin
            .min(upper_margin(s_tv, setup.tv_tolerance))
            .min(upper_margin(s_gap.abs(), setup.ce_tolerance))
            .min(lower_margin(u_gap, setup.unshifted_min_gap))
            .min(lower_margin(u_tv, setup.unshifted_min_tv));
        report.bound_curve.push(setup.ce_tolerance);
        report.measured_curve.push(s_gap.abs());
    }
    report.margin = margin;
    if converged {
        report.finish(margin >= 0.0);
    } else {
        report.pass = false;
        report.status = CheckStatus::Fail;
        report
            .notes
            .push("gradient descent hit the iteration cap before the gradient tolerance".into());
    }
    report
        .notes
        .push("curves: bound = cross-entropy tolerance, measured = |shifted - central| test cross-entropy per client".into());
    Ok(report)
}
