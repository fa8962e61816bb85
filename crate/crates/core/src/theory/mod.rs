//! Numerical checks of the optimality and convergence statements.
//!
//! Each check builds an instance with computable constants, runs it, and
//! returns a [`CheckReport`] comparing measured curves with the stated
//! bounds. Monte-Carlo comparisons always carry the `3 / sqrt(trials)`
//! slack in the direction that favours the bound, never the measurement.
//!
//! The standard instances below are the ones the acceptance suite and the
//! `theory` command run.

mod bounds;
mod optimality;
mod quad;
mod report;

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

pub use bounds::{
    check_curvature_constants, fedavg_gap_min_local_steps, nonconvex_bound, optimum_spread,
    shared_optimum_bound, verify_eta_halving, verify_fedavg_gap, verify_local_contraction,
    verify_nonconvex_rate, verify_shared_optimum_convergence, ConvexSetup, GapSetup,
    NonConvexSetup,
};
pub use optimality::{
    train_logistic_full_batch, verify_shift_optimality, GdOutcome, OptimalitySetup,
};
pub use quad::{
    averaged_fixed_point, simulate, GradientNoise, QuadClient, QuadInstance, Region, SimConfig,
    SimStats,
};
pub use report::{mc_slack, CheckReport, CheckStatus, TheoryConstants};

use crate::data::{GaussianClasses, LabelDist};
use crate::error::Result;
use crate::linalg::norm;
use crate::rng::{rng_for, stream};

fn random_direction(dim: usize, length: f64, seed: u64, tag: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[stream::INSTANCE, 1000 + tag]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x * length / n).collect()
}

/// Two Gaussian classes at `(+-1, 0)` with unit noise, clients with priors
/// `(0.9, 0.1)` and `(0.1, 0.9)`, 20k samples each.
pub fn standard_optimality_setup(seed: u64) -> Result<OptimalitySetup> {
    Ok(OptimalitySetup {
        classes: GaussianClasses::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0)?,
        client_priors: vec![
            LabelDist::new(vec![0.9, 0.1])?,
            LabelDist::new(vec![0.1, 0.9])?,
        ],
        samples_per_client: 20_000,
        test_samples: 20_000,
        grid_lo: -3.0,
        grid_hi: 3.0,
        grid_steps: 13,
        tv_tolerance: 0.05,
        ce_tolerance: 1e-3,
        unshifted_min_gap: 0.05,
        unshifted_min_tv: 0.2,
        grad_tolerance: 1e-8,
        max_iters: 200_000,
        seed,
    })
}

/// Ten-dimensional shared-optimum quadratics: four clients, spectra in
/// `[1, 10]`, `eta = 0.05`, `I = 20`, 50 rounds, 1000 trials, noise 0.1.
pub fn standard_convex_setup(seed: u64) -> Result<ConvexSetup> {
    let dim = 10;
    let w_star = random_direction(dim, 1.0, seed, 0);
    let instance = QuadInstance::shared_optimum(4, 1.0, 10.0, &w_star, seed)?;
    Ok(ConvexSetup {
        instance,
        mu: 1.0,
        beta: 10.0,
        sim: SimConfig {
            eta: 0.05,
            local_steps: 20,
            rounds: 50,
            trials: 1000,
            seed,
            start: vec![0.0; dim],
        },
        noise_sigma: 0.1,
        region_radius: 2.0,
    })
}

/// Scalar clients with curvatures 1 and 2 and optima `+1` and `-1`: the
/// global optimum is `-1/3` while the mean of the local optima is 0.
pub fn standard_gap_setup(seed: u64) -> Result<GapSetup> {
    Ok(GapSetup {
        instance: QuadInstance::scalar(&[1.0, 2.0], &[1.0, -1.0])?,
        start: vec![0.0],
        eta: 2e-4,
        noise_sigma: 0.05,
        region_margin: 0.1,
        rounds: 10,
        trials: 1000,
        seed,
        local_steps: None,
    })
}

/// Ten-dimensional quadratic-plus-cosine clients (spectra in `[0.5, 4]`,
/// `eps = 1`, so the objective is non-convex), `eta = 0.01`, `I = 10`,
/// `T = 200`.
pub fn standard_nonconvex_setup(seed: u64) -> Result<NonConvexSetup> {
    let dim = 10;
    let optima: Vec<Vec<f64>> = (0..4)
        .map(|i| random_direction(dim, 1.0, seed, 10 + i))
        .collect();
    let instance = QuadInstance::with_optima(&optima, 0.5, 4.0, seed)?.with_cos(1.0)?;
    let start = vec![0.0; dim];
    let radius = 2.0 * optimum_spread(&instance, &start)? + 4.0;
    Ok(NonConvexSetup {
        instance,
        sim: SimConfig {
            eta: 0.01,
            local_steps: 10,
            rounds: 200,
            trials: 1000,
            seed,
            start: start.clone(),
        },
        noise_sigma: 0.1,
        region: Region {
            center: start,
            radius,
        },
    })
}

/// A drift-dominated instance for the paired step-size comparison: the
/// run starts at the optimum of the quadratic part, so the average gradient
/// norm is driven by client drift, which shrinks with `eta`.
pub fn standard_eta_halving_setup(seed: u64) -> Result<NonConvexSetup> {
    let dim = 10;
    let optima: Vec<Vec<f64>> = (0..4)
        .map(|i| random_direction(dim, 2.0, seed, 20 + i))
        .collect();
    let instance = QuadInstance::with_optima(&optima, 1.0, 10.0, seed)?.with_cos(0.2)?;
    let start = instance.clone().with_cos(0.0)?.quadratic_global_optimum()?;
    let radius = 2.0 * optimum_spread(&instance, &start)? + 4.0;
    Ok(NonConvexSetup {
        instance,
        sim: SimConfig {
            eta: 0.02,
            local_steps: 20,
            rounds: 200,
            trials: 200,
            seed,
            start: start.clone(),
        },
        noise_sigma: 0.01,
        region: Region {
            center: start,
            radius,
        },
    })
}

/// Runs every standard check in a fixed order.
pub fn run_standard_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let convex = standard_convex_setup(seed)?;
    Ok(vec![
        verify_shift_optimality(&standard_optimality_setup(seed)?)?,
        verify_local_contraction(&convex)?,
        verify_shared_optimum_convergence(&convex)?,
        verify_fedavg_gap(&standard_gap_setup(seed)?)?,
        verify_nonconvex_rate(&standard_nonconvex_setup(seed)?)?,
        verify_eta_halving(&standard_eta_halving_setup(seed)?)?,
    ])
}
