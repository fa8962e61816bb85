//! Federated quadratic (optionally quadratic-plus-cosine) testbeds and the
//! Monte-Carlo engine that runs plain local SGD with uniform averaging on
//! them.
//!
//! Client `i` has `L_i(w) = 1/2 w^T A_i w - b_i^T w + eps * sum_j cos(w_j)`
//! and the global objective is the unweighted mean of the `L_i`. A stochastic
//! gradient is the exact gradient plus `N(0, sigma^2 I)` noise, clipped to
//! norm `G`, so the second-moment bound `E||g||^2 <= G^2` holds by
//! construction.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, dot, norm, norm_sq, Matrix};
use crate::math;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadClient {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl QuadClient {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        check_dim("quadratic b", a.rows(), b.len())?;
        if !a.is_symmetric(1e-12) {
            return Err(Error::Precondition("quadratic A must be symmetric".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Minimizer of the quadratic part, `A^{-1} b`.
    pub fn quadratic_optimum(&self) -> Result<Vec<f64>> {
        self.a.solve_spd(&self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadInstance {
    pub clients: Vec<QuadClient>,
    /// Amplitude of the `cos` term; zero gives a convex quadratic.
    pub cos_eps: f64,
}

/// Eigenvalues spread over `[mu, beta]` with both endpoints present.
fn spectrum<R: Rng + ?Sized>(dim: usize, mu: f64, beta: f64, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|j| match j {
            0 => mu,
            j if j + 1 == dim => beta,
            _ => rng.random_range(mu..=beta),
        })
        .collect()
}

/// `Q diag(lambda) Q^T`, symmetrized against rounding.
fn rotated(q: &Matrix, lambda: &[f64]) -> Matrix {
    let n = lambda.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n).map(|k| q[(i, k)] * lambda[k] * q[(j, k)]).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

impl QuadInstance {
    pub fn new(clients: Vec<QuadClient>, cos_eps: f64) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::Config("quadratic instance needs clients".into()))?;
        let d = first.dim();
        for c in &clients {
            check_dim("quadratic client dimension", d, c.dim())?;
        }
        if !(cos_eps.is_finite() && cos_eps >= 0.0) {
            return Err(Error::Config("cosine amplitude must be >= 0".into()));
        }
        Ok(Self { clients, cos_eps })
    }

    /// Random rotations of spectra in `[mu, beta]`, every client minimized at
    /// `w_star`.
    pub fn shared_optimum(
        num_clients: usize,
        mu: f64,
        beta: f64,
        w_star: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let d = w_star.len();
        let clients = (0..num_clients)
            .map(|i| {
                let mut rng = rng_for(seed, &[stream::INSTANCE, i as u64]);
                let a = rotated(
                    &Matrix::random_orthogonal(d, &mut rng),
                    &spectrum(d, mu, beta, &mut rng),
                );
                let b = a.matvec(w_star);
                QuadClient::new(a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clients, 0.0)
    }

    /// Like [`Self::shared_optimum`] but client `i` is minimized at
    /// `optima[i]`.
    pub fn with_optima(optima: &[Vec<f64>], mu: f64, beta: f64, seed: u64) -> Result<Self> {
        let d = optima.first().map_or(0, Vec::len);
        let clients = optima
            .iter()
            .enumerate()
            .map(|(i, opt)| {
                check_dim("client optimum", d, opt.len())?;
                let mut rng = rng_for(seed, &[stream::INSTANCE, i as u64]);
                let a = rotated(
                    &Matrix::random_orthogonal(d, &mut rng),
                    &spectrum(d, mu, beta, &mut rng),
                );
                let b = a.matvec(opt);
                QuadClient::new(a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clients, 0.0)
    }

    /// Scalar clients `L_i(w) = curv_i / 2 * (w - center_i)^2` (up to a
    /// constant).
    pub fn scalar(curvatures: &[f64], centers: &[f64]) -> Result<Self> {
        check_dim("scalar centers", curvatures.len(), centers.len())?;
        let clients = curvatures
            .iter()
            .zip(centers)
            .map(|(&m, &c)| QuadClient::new(Matrix::diag(&[m]), vec![m * c]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(clients, 0.0)
    }

    /// Same curvatures, every `b_i` replaced so all clients share `target`.
    pub fn recentered(&self, target: &[f64]) -> Result<Self> {
        let clients = self
            .clients
            .iter()
            .map(|c| QuadClient::new(c.a.clone(), c.a.matvec(target)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(clients, self.cos_eps)
    }

    pub fn with_cos(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::Config("cosine amplitude must be >= 0".into()));
        }
        self.cos_eps = eps;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Per-client minimizers of the quadratic parts.
    pub fn quadratic_optima(&self) -> Result<Vec<Vec<f64>>> {
        self.clients
            .iter()
            .map(QuadClient::quadratic_optimum)
            .collect()
    }

    /// `(1/N) sum A_i`.
    pub fn mean_hessian(&self) -> Matrix {
        let d = self.dim();
        let n = self.num_clients() as f64;
        let mut h = Matrix::zeros(d, d);
        for c in &self.clients {
            for (o, v) in h.as_mut_slice().iter_mut().zip(c.a.as_slice()) {
                *o += v / n;
            }
        }
        h
    }

    /// Minimizer of the quadratic part of the global objective,
    /// `(sum A_i)^{-1} sum b_i`.
    pub fn quadratic_global_optimum(&self) -> Result<Vec<f64>> {
        let n = self.num_clients() as f64;
        let mut rhs = vec![0.0; self.dim()];
        for c in &self.clients {
            for (r, v) in rhs.iter_mut().zip(&c.b) {
                *r += v / n;
            }
        }
        self.mean_hessian().solve_spd(&rhs)
    }

    /// Smallest and largest eigenvalue of any client's `A_i`.
    pub fn curvature_range(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &self.clients {
            let eig = c.a.symmetric_eigenvalues()?;
            lo = lo.min(eig[0]);
            hi = hi.max(eig[eig.len() - 1]);
        }
        Ok((lo, hi))
    }

    pub fn client_loss(&self, i: usize, w: &[f64]) -> f64 {
        let c = &self.clients[i];
        let aw = c.a.matvec(w);
        0.5 * dot(w, &aw) - dot(&c.b, w)
            + self.cos_eps * w.iter().map(|&x| math::cos(x)).sum::<f64>()
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let n = self.num_clients() as f64;
        (0..self.num_clients())
            .map(|i| self.client_loss(i, w))
            .sum::<f64>()
            / n
    }

    /// `A_i w - b_i - eps * sin(w)` into `out`.
    pub fn client_grad_into(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let c = &self.clients[i];
        c.a.matvec_into(w, out);
        for ((o, &b), &x) in out.iter_mut().zip(&c.b).zip(w) {
            *o -= b;
            if self.cos_eps != 0.0 {
                *o -= self.cos_eps * math::sin(x);
            }
        }
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let n = self.num_clients() as f64;
        let mut g = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for i in 0..self.num_clients() {
            self.client_grad_into(i, w, &mut tmp);
            for (a, b) in g.iter_mut().zip(&tmp) {
                *a += b / n;
            }
        }
        g
    }
}

/// Additive Gaussian gradient noise, clipped to norm `clip`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientNoise {
    /// Per-coordinate standard deviation.
    pub sigma: f64,
    /// The second-moment bound `G`.
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub eta: f64,
    /// Local SGD steps per round, `I`.
    pub local_steps: usize,
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    /// Initial global model `w̄^0`.
    pub start: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_dim("start point", dim, self.start.len())?;
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.local_steps == 0 || self.rounds == 0 || self.trials == 0 {
            return Err(Error::Config(
                "local steps, rounds and trials must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A ball the iterates are expected to stay in.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Trial means of the tracked quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    /// `E||w̄^r - ref||^2` for `r = 0..=rounds`.
    pub avg_dist_sq: Vec<f64>,
    /// `[t][i]`: `E||w_i^{t+1} - w_i*||^2`; empty without local references.
    pub local_dist_sq: Vec<Vec<f64>>,
    /// `[t][i]`: `E||w̄^t - w_i*||^2`; empty without local references.
    pub start_dist_sq: Vec<Vec<f64>>,
    /// `E||grad L(w̄^t)||^2` for `t = 0..rounds`.
    pub global_grad_sq: Vec<f64>,
    /// Mean of `||g_clipped - grad L_i||^2` over all steps.
    pub noise_var: f64,
    /// Fraction of stochastic gradients the clip changed.
    pub clip_fraction: f64,
    /// First 1-based round in which an iterate left the region.
    pub escape_round: Option<usize>,
}

/// Runs `trials` independent copies of: `rounds` rounds of `I` plain SGD
/// steps per client from the shared model, then the unweighted average.
pub fn simulate(
    inst: &QuadInstance,
    noise: GradientNoise,
    cfg: &SimConfig,
    reference: &[f64],
    local_refs: Option<&[Vec<f64>]>,
    region: Option<&Region>,
) -> Result<SimStats> {
    let d = inst.dim();
    let n = inst.num_clients();
    cfg.validate(d)?;
    check_dim("reference point", d, reference.len())?;
    if let Some(r) = local_refs {
        check_dim("local references", n, r.len())?;
    }
    if !(noise.sigma >= 0.0 && noise.clip > 0.0) {
        return Err(Error::Config(
            "noise sigma must be >= 0 and clip > 0".into(),
        ));
    }
    let rounds = cfg.rounds;
    let mut avg_dist_sq = vec![0.0; rounds + 1];
    let mut global_grad_sq = vec![0.0; rounds];
    let track_local = local_refs.is_some();
    let mut local_dist_sq = if track_local {
        vec![vec![0.0; n]; rounds]
    } else {
        Vec::new()
    };
    let mut start_dist_sq = local_dist_sq.clone();
    let mut noise_acc = 0.0;
    let mut clipped = 0u64;
    let mut steps = 0u64;
    let mut escape_round: Option<usize> = None;

    let mut w = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut next = vec![0.0; d];
    for trial in 0..cfg.trials {
        let mut rng = rng_for(cfg.seed, &[stream::TRIAL, trial as u64]);
        let mut avg = cfg.start.clone();
        avg_dist_sq[0] += dist_sq(&avg, reference);
        for t in 0..rounds {
            global_grad_sq[t] += norm_sq(&inst.global_grad(&avg));
            next.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                if let Some(refs) = local_refs {
                    start_dist_sq[t][i] += dist_sq(&avg, &refs[i]);
                }
                w.copy_from_slice(&avg);
                for _ in 0..cfg.local_steps {
                    inst.client_grad_into(i, &w, &mut g);
                    let mut extra = 0.0;
                    if noise.sigma > 0.0 {
                        let mut sq = 0.0;
                        let mut exact_sq = 0.0;
                        let mut cross = 0.0;
                        let mut xi_sq = 0.0;
                        // g holds the exact gradient; add noise in place and
                        // remember enough to recover ||g_hat - g||^2.
                        for gv in g.iter_mut() {
                            let xi = noise.sigma * rng.sample::<f64, _>(StandardNormal);
                            exact_sq += *gv * *gv;
                            cross += *gv * xi;
                            xi_sq += xi * xi;
                            *gv += xi;
                            sq += *gv * *gv;
                        }
                        let nrm = math::sqrt(sq);
                        if nrm > noise.clip {
                            let s = noise.clip / nrm;
                            g.iter_mut().for_each(|v| *v *= s);
                            clipped += 1;
                            // ||s(g + xi) - g||^2 = s^2 sq - 2 s (exact_sq + cross) + exact_sq
                            extra = s * s * sq - 2.0 * s * (exact_sq + cross) + exact_sq;
                        } else {
                            extra = xi_sq;
                        }
                    } else {
                        let nrm = norm(&g);
                        if nrm > noise.clip {
                            let s = noise.clip / nrm;
                            extra = (1.0 - s) * (1.0 - s) * nrm * nrm;
                            g.iter_mut().for_each(|v| *v *= s);
                            clipped += 1;
                        }
                    }
                    noise_acc += extra.max(0.0);
                    steps += 1;
                    for (wv, gv) in w.iter_mut().zip(&g) {
                        *wv -= cfg.eta * gv;
                    }
                    if escape_round.is_none() {
                        if let Some(reg) = region {
                            if dist_sq(&w, &reg.center) > reg.radius * reg.radius {
                                escape_round = Some(t + 1);
                            }
                        }
                    }
                }
                if let Some(refs) = local_refs {
                    local_dist_sq[t][i] += dist_sq(&w, &refs[i]);
                }
                for (a, b) in next.iter_mut().zip(&w) {
                    *a += b;
                }
            }
            for (a, b) in avg.iter_mut().zip(&next) {
                *a = b / n as f64;
            }
            if !avg.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("quadratic simulation"));
            }
            avg_dist_sq[t + 1] += dist_sq(&avg, reference);
        }
    }

    let k = cfg.trials as f64;
    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= k);
    scale(&mut avg_dist_sq);
    scale(&mut global_grad_sq);
    local_dist_sq.iter_mut().for_each(scale);
    start_dist_sq.iter_mut().for_each(scale);
    Ok(SimStats {
        avg_dist_sq,
        local_dist_sq,
        start_dist_sq,
        global_grad_sq,
        noise_var: if steps > 0 {
            noise_acc / steps as f64
        } else {
            0.0
        },
        clip_fraction: if steps > 0 {
            clipped as f64 / steps as f64
        } else {
            0.0
        },
        escape_round,
    })
}

/// Fixed point of the noiseless averaged round map
/// `w -> (1/N) sum_i [M_i w + (I - M_i) w_i*]`, `M_i = (I - eta A_i)^I`.
pub fn averaged_fixed_point(inst: &QuadInstance, eta: f64, local_steps: usize) -> Result<Vec<f64>> {
    if inst.cos_eps != 0.0 {
        return Err(Error::Precondition(
            "fixed point needs a pure quadratic instance".into(),
        ));
    }
    let d = inst.dim();
    let n = inst.num_clients() as f64;
    let optima = inst.quadratic_optima()?;
    let mut lhs = Matrix::identity(d);
    let mut rhs = vec![0.0; d];
    for (c, opt) in inst.clients.iter().zip(&optima) {
        let mut step = Matrix::identity(d);
        for (s, a) in step.as_mut_slice().iter_mut().zip(c.a.as_slice()) {
            *s -= eta * a;
        }
        let m = matrix_power(&step, local_steps)?;
        // lhs -= M_i / N; rhs += (I - M_i) w_i* / N
        for (l, v) in lhs.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *l -= v / n;
        }
        let mw = m.matvec(opt);
        for ((r, o), mv) in rhs.iter_mut().zip(opt).zip(&mw) {
            *r += (o - mv) / n;
        }
    }
    lhs.solve_spd(&rhs)
}

fn matrix_power(m: &Matrix, mut k: usize) -> Result<Matrix> {
    let mut result = Matrix::identity(m.rows());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = result.matmul(&base)?;
        }
        k >>= 1;
        if k > 0 {
            base = base.matmul(&base)?;
        }
    }
    Ok(result)
}
