//! Monte-Carlo checks of the local contraction bound, the FedShift
//! convergence bound, the FedAvg gap lower bound and the non-convex
//! stationarity bound.
//!
//! All runs use plain SGD (no momentum, no weight decay) and unweighted
//! averaging. Constants are computed from the instance: curvatures by
//! eigendecomposition, optima in closed form, `G` from a certified region
//! plus the noise tail, `sigma` as the larger of the nominal and the
//! measured post-clip noise.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm};
use crate::math;
use crate::theory::quad::{
    averaged_fixed_point, simulate, GradientNoise, QuadInstance, Region, SimConfig, SimStats,
};
use crate::theory::report::{
    lower_margin, mc_slack, upper_margin, CheckReport, CheckStatus, TheoryConstants,
};

/// Relative tolerance when comparing nominal curvature constants with the
/// eigendecomposition.
const CURVATURE_TOL: f64 = 1e-9;

/// A strongly convex quadratic testbed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSetup {
    pub instance: QuadInstance,
    /// Nominal curvature bounds the instance was built with.
    pub mu: f64,
    pub beta: f64,
    pub sim: SimConfig,
    pub noise_sigma: f64,
    /// The global model is assumed to stay within this distance of `w*`;
    /// `G` is certified on that ball.
    pub region_radius: f64,
}

/// Checks `mu <= lambda_min(A_i)` and `lambda_max(A_i) <= beta` for every
/// client.
pub fn check_curvature_constants(inst: &QuadInstance, mu: f64, beta: f64) -> Result<(f64, f64)> {
    let (lo, hi) = inst.curvature_range()?;
    if lo < mu * (1.0 - CURVATURE_TOL) || hi > beta * (1.0 + CURVATURE_TOL) {
        return Err(Error::Precondition(format!(
            "curvature constants inconsistent: mu={mu} beta={beta}, measured [{lo}, {hi}]"
        )));
    }
    Ok((lo, hi))
}

/// Upper bound on `||grad L_i(w)||` for `||w - center|| <= radius`, plus a
/// four-sigma allowance for the noise norm.
fn certified_g(inst: &QuadInstance, center: &[f64], radius: f64, noise_sigma: f64) -> Result<f64> {
    let d = inst.dim() as f64;
    let mut g = 0.0f64;
    for c in &inst.clients {
        let eig = c.a.symmetric_eigenvalues()?;
        let lmax = eig[eig.len() - 1];
        let opt = c.quadratic_optimum()?;
        let reach = radius + math::sqrt(dist_sq(center, &opt));
        g = g.max(lmax * reach + inst.cos_eps * math::sqrt(d));
    }
    Ok(g + noise_sigma * (math::sqrt(d) + 4.0))
}

fn effective_sigma(noise_sigma: f64, dim: usize, stats: &SimStats) -> f64 {
    math::sqrt((noise_sigma * noise_sigma * dim as f64).max(stats.noise_var))
}

struct ConvexRun {
    constants: TheoryConstants,
    w_star: Vec<f64>,
    optima: Vec<Vec<f64>>,
    stats: SimStats,
}

fn run_convex(setup: &ConvexSetup) -> Result<ConvexRun> {
    let inst = &setup.instance;
    if inst.cos_eps != 0.0 {
        return Err(Error::Precondition(
            "convex checks need a pure quadratic instance".into(),
        ));
    }
    check_curvature_constants(inst, setup.mu, setup.beta)?;
    let w_star = inst.quadratic_global_optimum()?;
    let optima = inst.quadratic_optima()?;
    let g = certified_g(inst, &w_star, setup.region_radius, setup.noise_sigma)?;
    let region = Region {
        center: w_star.clone(),
        radius: setup.region_radius
            + optima
                .iter()
                .map(|o| math::sqrt(dist_sq(o, &w_star)))
                .fold(0.0, f64::max),
    };
    let stats = simulate(
        inst,
        GradientNoise {
            sigma: setup.noise_sigma,
            clip: g,
        },
        &setup.sim,
        &w_star,
        Some(&optima),
        Some(&region),
    )?;
    let constants = TheoryConstants {
        mu: setup.mu,
        beta: setup.beta,
        g,
        sigma: effective_sigma(setup.noise_sigma, inst.dim(), &stats),
        delta: None,
        zeta: None,
        gamma: Some(math::sqrt(dist_sq(&setup.sim.start, &w_star))),
        eta: setup.sim.eta,
        local_steps: setup.sim.local_steps,
        rounds: setup.sim.rounds,
    };
    constants.validate()?;
    Ok(ConvexRun {
        constants,
        w_star,
        optima,
        stats,
    })
}

fn annotate_sim(report: &mut CheckReport, stats: &SimStats, trials: usize) {
    report.constant("trials", trials as f64);
    report.detail("clip_fraction", stats.clip_fraction);
    report.detail("measured_noise_var", stats.noise_var);
    if let Some(r) = stats.escape_round {
        report.notes.push(format!(
            "an iterate left the certified region in round {r}; G is still enforced by clipping"
        ));
    }
}

/// Local contraction: `E||w_i^{t+1} - w_i*||^2 <= (1 - eta mu)^(I+1)
/// E||w̄^t - w_i*||^2 + (eta / mu) G^2` for every client and round.
pub fn verify_local_contraction(setup: &ConvexSetup) -> Result<CheckReport> {
    let run = run_convex(setup)?;
    let c = run.constants;
    let q = c.round_contraction();
    let floor = c.eta / c.mu * c.g * c.g;
    let slack = mc_slack(setup.sim.trials);
    let n = run.optima.len() as f64;

    let mut report = CheckReport::new("local_contraction");
    report.constants = c.to_map();
    let mut margin = f64::INFINITY;
    for (local, start) in run.stats.local_dist_sq.iter().zip(&run.stats.start_dist_sq) {
        let mut bound_mean = 0.0;
        let mut measured_mean = 0.0;
        for (&lhs, &s) in local.iter().zip(start) {
            let bound = q * s + floor;
            margin = margin.min(upper_margin(lhs, bound * (1.0 + slack)));
            bound_mean += bound / n;
            measured_mean += lhs / n;
        }
        report.bound_curve.push(bound_mean);
        report.measured_curve.push(measured_mean);
    }
    report.margin = margin;
    annotate_sim(&mut report, &run.stats, setup.sim.trials);
    report
        .notes
        .push("curves are client means; the check is per client and round".to_string());
    report.finish(margin >= 0.0);
    Ok(report)
}

/// `(1 - eta mu)^((I+1)(r-1)) gamma^2 + eta [1 - (1 - eta mu)^((I+1) r)] /
/// (mu [1 - (1 - eta mu)^(I+1)]) G^2` for the model after round `r >= 1`.
pub fn shared_optimum_bound(c: &TheoryConstants, gamma: f64, round: usize) -> f64 {
    let q = c.round_contraction();
    let first = math::powi(q, round as i32 - 1) * gamma * gamma;
    let floor = c.eta * (1.0 - math::powi(q, round as i32)) / (c.mu * (1.0 - q)) * c.g * c.g;
    first + floor
}

/// Convergence with a shared optimum: `E||w̄^r - w*||^2` against
/// [`shared_optimum_bound`] at every round, and the last round against the
/// limiting floor `eta G^2 / (mu [1 - (1 - eta mu)^(I+1)])`.
pub fn verify_shared_optimum_convergence(setup: &ConvexSetup) -> Result<CheckReport> {
    let run = run_convex(setup)?;
    let spread = run
        .optima
        .iter()
        .map(|o| math::sqrt(dist_sq(o, &run.w_star)))
        .fold(0.0, f64::max);
    if spread >= 1e-12 {
        return Err(Error::Precondition(format!(
            "local optima must coincide with the global optimum (max distance {spread:e})"
        )));
    }
    let c = run.constants;
    let gamma = c.gamma.unwrap_or(0.0);
    let slack = mc_slack(setup.sim.trials);

    let mut report = CheckReport::new("shared_optimum_convergence");
    report.constants = c.to_map();
    let mut margin = f64::INFINITY;
    for r in 1..=setup.sim.rounds {
        let bound = shared_optimum_bound(&c, gamma, r);
        let measured = run.stats.avg_dist_sq[r];
        margin = margin.min(upper_margin(measured, bound * (1.0 + slack)));
        report.bound_curve.push(bound);
        report.measured_curve.push(measured);
    }
    let q = c.round_contraction();
    let limit = c.eta * c.g * c.g / (c.mu * (1.0 - q));
    let last = run.stats.avg_dist_sq[setup.sim.rounds];
    report.detail("limit_floor", limit);
    report.detail("final_distance_sq", last);
    margin = margin.min(upper_margin(last, limit * (1.0 + slack)));
    report.margin = margin;
    annotate_sim(&mut report, &run.stats, setup.sim.trials);
    report.finish(margin >= 0.0);
    Ok(report)
}

/// A heterogeneous instance for the FedAvg gap.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSetup {
    pub instance: QuadInstance,
    pub start: Vec<f64>,
    pub eta: f64,
    pub noise_sigma: f64,
    /// Extra radius beyond `max(gamma, zeta)` on which `G` is certified.
    pub region_margin: f64,
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    /// `None` uses the smallest admissible `I`.
    pub local_steps: Option<usize>,
}

/// The smallest `I` for which the gap statement applies, or `None` when
/// `delta^2 / 16 - eta G^2 / mu <= 0` makes it vacuous.
pub fn fedavg_gap_min_local_steps(
    delta: f64,
    zeta: f64,
    gamma: f64,
    eta: f64,
    mu: f64,
    g: f64,
) -> Option<f64> {
    let num = delta * delta / 16.0 - eta / mu * g * g;
    if num <= 0.0 {
        return None;
    }
    let l = math::ln(1.0 - eta * mu);
    let a = math::ln(num / ((1.25 * delta + zeta) * (1.25 * delta + zeta))) / l - 1.0;
    let b = math::ln(num / ((zeta + gamma) * (zeta + gamma))) / l - 1.0;
    Some(a.max(b))
}

/// FedAvg gap: with distinct local optima (`delta > 0`) and `I` above the
/// threshold, `E||w̄^r - w*||^2 >= delta^2 / 2` for every round `r >= 1`.
/// A shared-optimum control with the same curvatures must converge below
/// `delta^2 / 100`, and the noiseless fixed-point gap must grow with `I`.
///
/// Returns `Err` when `delta = 0` (the statement does not apply).
pub fn verify_fedavg_gap(setup: &GapSetup) -> Result<CheckReport> {
    let inst = &setup.instance;
    if inst.cos_eps != 0.0 {
        return Err(Error::Precondition(
            "gap check needs a pure quadratic instance".into(),
        ));
    }
    let w_star = inst.quadratic_global_optimum()?;
    let optima = inst.quadratic_optima()?;
    let n = optima.len() as f64;
    let mut mean_opt = vec![0.0; inst.dim()];
    for o in &optima {
        for (m, v) in mean_opt.iter_mut().zip(o) {
            *m += v / n;
        }
    }
    let delta = math::sqrt(dist_sq(&mean_opt, &w_star));
    if delta < 1e-12 {
        return Err(Error::Precondition(
            "delta = ||mean of local optima - global optimum|| is zero; the gap statement needs delta > 0".into(),
        ));
    }
    let zeta = optima
        .iter()
        .map(|o| math::sqrt(dist_sq(o, &w_star)))
        .fold(0.0, f64::max);
    let gamma = math::sqrt(dist_sq(&setup.start, &w_star));
    let (mu, beta) = inst.curvature_range()?;
    let radius = gamma.max(zeta) + setup.region_margin;
    let g = certified_g(inst, &w_star, radius, setup.noise_sigma)?;
    let bound = delta * delta / 2.0;

    let mut report = CheckReport::new("fedavg_gap");
    let mut constants = TheoryConstants {
        mu,
        beta,
        g,
        sigma: setup.noise_sigma * math::sqrt(inst.dim() as f64),
        delta: Some(delta),
        zeta: Some(zeta),
        gamma: Some(gamma),
        eta: setup.eta,
        local_steps: 0,
        rounds: setup.rounds,
    };
    constants.validate()?;

    let Some(i_min) = fedavg_gap_min_local_steps(delta, zeta, gamma, setup.eta, mu, g) else {
        report.constants = constants.to_map();
        report.status = CheckStatus::Unsatisfiable;
        report.notes.push(format!(
            "hypotheses unsatisfiable: delta^2/16 = {:.3e} <= eta G^2 / mu = {:.3e}",
            delta * delta / 16.0,
            setup.eta / mu * g * g
        ));
        return Ok(report);
    };
    let local_steps = setup
        .local_steps
        .unwrap_or_else(|| (math::floor(i_min) as usize + 1).max(1));
    constants.local_steps = local_steps;
    report.constants = constants.to_map();
    report.constant("I_min", i_min);
    if (local_steps as f64) < i_min {
        report.status = CheckStatus::Unsatisfiable;
        report.notes.push(format!(
            "hypotheses not met: I = {local_steps} < I_min = {i_min:.1}"
        ));
        return Ok(report);
    }

    let sim = SimConfig {
        eta: setup.eta,
        local_steps,
        rounds: setup.rounds,
        trials: setup.trials,
        seed: setup.seed,
        start: setup.start.clone(),
    };
    let noise = GradientNoise {
        sigma: setup.noise_sigma,
        clip: g,
    };
    let stats = simulate(inst, noise, &sim, &w_star, None, None)?;
    let slack = mc_slack(setup.trials);
    let mut margin = f64::INFINITY;
    for r in 1..=setup.rounds {
        let measured = stats.avg_dist_sq[r];
        margin = margin.min(lower_margin(measured, bound * (1.0 - slack)));
        report.bound_curve.push(bound);
        report.measured_curve.push(measured);
    }
    annotate_sim(&mut report, &stats, setup.trials);

    let control_inst = inst.recentered(&w_star)?;
    let control = simulate(&control_inst, noise, &sim, &w_star, None, None)?;
    let control_final = control.avg_dist_sq[setup.rounds];
    let control_limit = delta * delta / 100.0;
    report.detail("control_final_distance_sq", control_final);
    report.detail("control_limit", control_limit);
    let control_ok = control_final < control_limit;

    let fp = averaged_fixed_point(inst, setup.eta, local_steps)?;
    let fp_gap = dist_sq(&fp, &w_star);
    report.detail("fixed_point_gap_sq", fp_gap);
    report.detail("mean_optimum_gap_sq", delta * delta);
    let mut ladder = Vec::new();
    for k in (0..=8).rev() {
        let steps = (local_steps >> k).max(1);
        ladder.push(dist_sq(
            &averaged_fixed_point(inst, setup.eta, steps)?,
            &w_star,
        ));
    }
    let monotone = ladder.windows(2).all(|w| w[1] >= w[0]);
    for (k, gap) in ladder.iter().enumerate() {
        report.detail(
            &format!("fixed_point_gap_sq_I_div_{}", 1usize << (8 - k)),
            *gap,
        );
    }
    if !monotone {
        report
            .notes
            .push("noiseless fixed-point gap is not monotone in I".to_string());
    }
    if !control_ok {
        report.notes.push(format!(
            "shared-optimum control ended at {control_final:.3e}, not below {control_limit:.3e}"
        ));
    }
    report.margin = margin;
    report.finish(margin >= 0.0 && control_ok && monotone);
    Ok(report)
}

/// A smooth, possibly non-convex instance for the stationarity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct NonConvexSetup {
    pub instance: QuadInstance,
    pub sim: SimConfig,
    pub noise_sigma: f64,
    /// Ball on which `G` and `beta` are certified; leaving it makes the
    /// check inconclusive.
    pub region: Region,
}

struct NonConvexRun {
    beta: f64,
    g: f64,
    sigma: f64,
    gap: f64,
    l_inf: f64,
    stats: SimStats,
}

fn run_nonconvex(setup: &NonConvexSetup) -> Result<NonConvexRun> {
    let inst = &setup.instance;
    let (_, lmax) = inst.curvature_range()?;
    let beta = lmax + inst.cos_eps;
    let g = certified_g(
        inst,
        &setup.region.center,
        setup.region.radius,
        setup.noise_sigma,
    )?;
    let quad = inst.clone().with_cos(0.0)?;
    let l_inf =
        quad.global_loss(&quad.quadratic_global_optimum()?) - inst.cos_eps * inst.dim() as f64;
    let gap = inst.global_loss(&setup.sim.start) - l_inf;
    let reference = setup.sim.start.clone();
    let stats = simulate(
        inst,
        GradientNoise {
            sigma: setup.noise_sigma,
            clip: g,
        },
        &setup.sim,
        &reference,
        None,
        Some(&setup.region),
    )?;
    Ok(NonConvexRun {
        beta,
        g,
        sigma: effective_sigma(setup.noise_sigma, inst.dim(), &stats),
        gap,
        l_inf,
        stats,
    })
}

/// `2 / (eta T) (L(w̄^0) - L_inf) + 4 eta^2 I^2 G^2 beta^2 + (beta / N) eta sigma^2`.
#[allow(clippy::too_many_arguments)] // one argument per symbol of the bound
pub fn nonconvex_bound(
    gap: f64,
    eta: f64,
    local_steps: usize,
    g: f64,
    beta: f64,
    sigma: f64,
    clients: usize,
    rounds: usize,
) -> f64 {
    let i = local_steps as f64;
    2.0 / (eta * rounds as f64) * gap
        + 4.0 * eta * eta * i * i * g * g * beta * beta
        + beta / clients as f64 * eta * sigma * sigma
}

/// Non-convex rate: `(1/T') sum_{t=1}^{T'} E||grad L(w̄^{t-1})||^2` against
/// [`nonconvex_bound`] for every prefix `T' <= T`. `L(w̄*)` is replaced by
/// the certified lower bound `min(quadratic part) - eps * d`.
pub fn verify_nonconvex_rate(setup: &NonConvexSetup) -> Result<CheckReport> {
    let run = run_nonconvex(setup)?;
    let inst = &setup.instance;
    let sim = &setup.sim;
    let slack = mc_slack(sim.trials);

    let mut report = CheckReport::new("nonconvex_rate");
    for (k, v) in [
        ("beta", run.beta),
        ("G", run.g),
        ("sigma", run.sigma),
        ("eta", sim.eta),
        ("I", sim.local_steps as f64),
        ("T", sim.rounds as f64),
        ("N", inst.num_clients() as f64),
        ("cos_eps", inst.cos_eps),
        ("L_inf", run.l_inf),
        ("initial_gap", run.gap),
        ("region_radius", setup.region.radius),
    ] {
        report.constant(k, v);
    }
    let mut margin = f64::INFINITY;
    let mut acc = 0.0;
    for t in 1..=sim.rounds {
        acc += run.stats.global_grad_sq[t - 1];
        let measured = acc / t as f64;
        let bound = nonconvex_bound(
            run.gap,
            sim.eta,
            sim.local_steps,
            run.g,
            run.beta,
            run.sigma,
            inst.num_clients(),
            t,
        );
        margin = margin.min(upper_margin(measured, bound * (1.0 + slack)));
        report.bound_curve.push(bound);
        report.measured_curve.push(measured);
    }
    annotate_sim(&mut report, &run.stats, sim.trials);
    report.margin = margin;
    if let Some(r) = run.stats.escape_round {
        report.pass = false;
        report.status = CheckStatus::Inconclusive;
        report.detail("escape_round", r as f64);
    } else {
        report.finish(margin >= 0.0);
    }
    Ok(report)
}

/// Paired runs at `eta` and `eta / 2` with shared noise seeds: the average
/// squared global gradient norm over `T` rounds must not increase.
pub fn verify_eta_halving(setup: &NonConvexSetup) -> Result<CheckReport> {
    let full = run_nonconvex(setup)?;
    let mut half_setup = setup.clone();
    half_setup.sim.eta = setup.sim.eta / 2.0;
    let half = run_nonconvex(&half_setup)?;
    let sim = &setup.sim;
    let avg = |s: &SimStats| s.global_grad_sq.iter().sum::<f64>() / s.global_grad_sq.len() as f64;
    let (m_full, m_half) = (avg(&full.stats), avg(&half.stats));
    let slack = mc_slack(sim.trials);
    let drift = |eta: f64, r: &NonConvexRun| {
        let i = sim.local_steps as f64;
        4.0 * eta * eta * i * i * r.g * r.g * r.beta * r.beta
    };

    let mut report = CheckReport::new("nonconvex_eta_halving");
    report.constant("eta", sim.eta);
    report.constant("I", sim.local_steps as f64);
    report.constant("T", sim.rounds as f64);
    report.constant("trials", sim.trials as f64);
    report.detail("drift_term_eta", drift(sim.eta, &full));
    report.detail("drift_term_half_eta", drift(half_setup.sim.eta, &half));
    report.bound_curve = vec![m_full * (1.0 + slack)];
    report.measured_curve = vec![m_half];
    report.detail("avg_grad_sq_eta", m_full);
    report.detail("avg_grad_sq_half_eta", m_half);
    report.margin = upper_margin(m_half, m_full * (1.0 + slack));
    if let Some(r) = full.stats.escape_round.or(half.stats.escape_round) {
        report.status = CheckStatus::Inconclusive;
        report.detail("escape_round", r as f64);
    } else {
        report.finish(report.margin >= 0.0);
    }
    Ok(report)
}

/// Norm of the largest per-client optimum offset from `center`.
pub fn optimum_spread(inst: &QuadInstance, center: &[f64]) -> Result<f64> {
    Ok(inst
        .quadratic_optima()?
        .iter()
        .map(|o| {
            let diff: Vec<f64> = o.iter().zip(center).map(|(a, b)| a - b).collect();
            norm(&diff)
        })
        .fold(0.0, f64::max))
}
