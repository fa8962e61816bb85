//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use fedshift_core::nn::{self, Architecture, Batch, LossConfig};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient entries below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-4;

/// Smallest `|pre-activation| / (h * (1 + |x|_inf))` of the first hidden
/// layer. Parameters are laid out per layer as a row-major `fan_out x fan_in`
/// weight block followed by the bias. A value above 1 means no `+-h`
/// perturbation of any parameter can cross a ReLU kink.
pub fn kink_clearance(arch: &Architecture, params: &[f64], batch: &Batch, h: f64) -> f64 {
    assert!(
        arch.hidden_dims.len() <= 1,
        "helper handles at most one hidden layer"
    );
    let Some(&hidden) = arch.hidden_dims.first() else {
        return f64::INFINITY;
    };
    let d = arch.input_dim;
    let (w, b) = params.split_at(hidden * d);
    let mut worst = f64::INFINITY;
    for r in 0..batch.inputs.rows() {
        let x = batch.inputs.row(r);
        let reach = h * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for j in 0..hidden {
            let z: f64 = b[j]
                + w[j * d..(j + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, c)| a * c)
                    .sum::<f64>();
            worst = worst.min(z.abs() / reach);
        }
    }
    worst
}

/// Largest per-coordinate relative error `|fd - g| / max(|fd|, |g|, FD_FLOOR)`
/// between the analytic gradient and central differences.
pub fn max_relative_grad_error(
    arch: &Architecture,
    params: &[f64],
    batch: &Batch,
    cfg: &LossConfig,
) -> f64 {
    let (_, g) = nn::loss_and_grad(params, arch, batch, cfg).unwrap();
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + FD_STEP;
        let up = nn::batch_loss(&p, arch, batch, cfg).unwrap();
        p[k] = orig - FD_STEP;
        let down = nn::batch_loss(&p, arch, batch, cfg).unwrap();
        p[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}
