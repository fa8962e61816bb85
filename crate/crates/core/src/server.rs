//! Round orchestration: client sampling, local updates, weighted delta
//! aggregation, learning-rate schedule and evaluation.
//!
//! The loop is single-threaded and every reduction runs in ascending client
//! id order, so a run is a pure function of its configuration and data.

use alloc::vec::Vec;

use rand::seq::index;

use crate::data::{
    compute_shift, secure_aggregate_dist, ClientShard, Dataset, LabelDist, ShiftVector, MASK_SCALE,
};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::nn::{self, Architecture, ParamVector};
use crate::rng::{derive_seed, rng_for, stream};
use crate::strategy::{
    local_update, reweight_class_weights, ControlState, LocalAux, LocalHyper, StrategySpec,
};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunConfig {
    pub rounds: usize,
    /// Participation fraction `C` in `(0, 1]`.
    pub fraction: f64,
    pub strategy: StrategySpec,
    pub hyper: LocalHyper,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Seeds model init, client sampling and aggregation masks.
    pub seed: u64,
    /// Evaluate every this many rounds (and always after the last); 0 disables.
    pub eval_every: usize,
    /// Divide the aggregated delta by the participants' total weight.
    pub renormalize: bool,
}

impl RunConfig {
    pub fn new(strategy: StrategySpec, hyper: LocalHyper, rounds: usize, seed: u64) -> Self {
        Self {
            rounds,
            fraction: 1.0,
            strategy,
            hyper,
            lr_decay_factor: 0.95,
            lr_decay_every: 10,
            seed,
            eval_every: 1,
            renormalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config("fraction must be in (0,1]".into()));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return Err(Error::Config("lr decay factor must be positive".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr decay interval must be >= 1".into()));
        }
        self.strategy.validate()?;
        self.hyper.validate()
    }

    /// `eta * factor^floor(t / every)` for the 0-based round `t`.
    pub fn learning_rate(&self, round: usize) -> f64 {
        let steps = (round / self.lr_decay_every) as i32;
        self.hyper.sgd.learning_rate * math::powi(self.lr_decay_factor, steps)
    }
}

/// Metrics for one round; `round` is 1-based.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    pub test_accuracy: Option<f64>,
    /// Mean over participants of their mean mini-batch loss.
    pub train_loss: f64,
    pub eta: f64,
    /// Seconds since the run started, if a clock was supplied.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub final_params: ParamVector,
    /// Securely aggregated `P(y)` over all clients.
    pub global_dist: LabelDist,
    /// Per-client shifts, empty unless the strategy is FedShift.
    pub shifts: Vec<ShiftVector>,
}

impl TrainingRun {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_accuracy)
    }
}

/// Source of elapsed wall time. `core` has no clock, so the default reports
/// none.
pub trait Clock {
    fn elapsed_secs(&mut self) -> Option<f64>;
}

pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&mut self) -> Option<f64> {
        None
    }
}

/// `m = max(floor(C * N), 1)`.
pub fn participants_per_round(num_clients: usize, fraction: f64) -> usize {
    (math::floor(fraction * num_clients as f64) as usize).clamp(1, num_clients.max(1))
}

/// Uniform size-`m` subset of `0..N`, sorted, deterministic in `(seed, round)`.
pub fn sample_clients(num_clients: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    let m = participants_per_round(num_clients, fraction);
    if m >= num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = rng_for(seed, &[stream::SAMPLE, round as u64]);
    let mut picked = index::sample(&mut rng, num_clients, m).into_vec();
    picked.sort_unstable();
    picked
}

/// `w_prev + sum_i weight_i * (w_i - w_prev)`, summed in ascending client id
/// order. `weights` is indexed by client id.
pub fn aggregate(
    w_prev: &[f64],
    updates: &[(usize, ParamVector)],
    weights: &[f64],
    renormalize: bool,
) -> Result<ParamVector> {
    let mut order: Vec<&(usize, ParamVector)> = updates.iter().collect();
    order.sort_by_key(|u| u.0);
    for (id, w) in &order {
        check_dim("client update", w_prev.len(), w.len())?;
        if *id >= weights.len() {
            return Err(Error::Config(alloc::format!(
                "no aggregation weight for client {id}"
            )));
        }
    }
    let scale = if renormalize {
        let total: f64 = order.iter().map(|(id, _)| weights[*id]).sum();
        if total <= 0.0 {
            return Err(Error::Config("participants have zero total weight".into()));
        }
        1.0 / total
    } else {
        1.0
    };
    let mut out = ParamVector::from(w_prev.to_vec());
    for (id, w) in order {
        let wt = weights[*id] * scale;
        for ((o, &p), &l) in out.iter_mut().zip(w_prev).zip(w.iter()) {
            *o += wt * (l - p);
        }
    }
    Ok(out)
}

/// Fraction of `data` whose argmax prediction matches the label.
pub fn evaluate_accuracy(params: &[f64], arch: &Architecture, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk)?;
        let logits = nn::forward(params, arch, &batch.inputs)?;
        for (r, &y) in batch.labels.iter().enumerate() {
            if nn::argmax(logits.row(r)) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// First 1-based round whose accuracy reaches `target`.
pub fn rounds_to_accuracy(records: &[RoundRecord], target: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.test_accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round)
}

/// `baseline_rounds / rounds`, or `None` when the target was never reached.
pub fn speedup(baseline_rounds: usize, rounds: Option<usize>) -> Option<f64> {
    rounds.map(|r| baseline_rounds as f64 / r as f64)
}

/// Securely aggregated global label distribution and per-client shifts.
///
/// Each masked message is rounded at the scale of the masks, so the
/// aggregate carries an absolute error of order `N * MASK_SCALE * eps`.
/// Shift components smaller than that error relative to `P(k)` are
/// indistinguishable from zero and are set to exactly zero; identical local
/// distributions therefore give exactly zero shifts.
pub fn global_statistics(
    shards: &[ClientShard],
    seed: u64,
) -> Result<(LabelDist, Vec<ShiftVector>)> {
    let dists: Vec<LabelDist> = shards.iter().map(|s| s.label_dist.clone()).collect();
    let weights: Vec<f64> = shards.iter().map(|s| s.weight).collect();
    let global =
        secure_aggregate_dist(&dists, &weights, derive_seed(seed, &[stream::MASK]))?.result;
    let abs_err = 4.0 * dists.len() as f64 * MASK_SCALE * f64::EPSILON;
    let shifts = dists
        .iter()
        .map(|d| {
            let s = compute_shift(d, &global)?;
            let snapped: Vec<f64> = s
                .values()
                .iter()
                .zip(global.probs())
                .map(|(&v, &p)| if v.abs() <= abs_err / p { 0.0 } else { v })
                .collect();
            Ok(ShiftVector::from(snapped))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((global, shifts))
}

pub fn run_training(
    cfg: &RunConfig,
    arch: &Architecture,
    shards: &[ClientShard],
    test: &Dataset,
) -> Result<TrainingRun> {
    run_training_with_clock(cfg, arch, shards, test, &mut NoClock)
}

pub fn run_training_with_clock(
    cfg: &RunConfig,
    arch: &Architecture,
    shards: &[ClientShard],
    test: &Dataset,
    clock: &mut dyn Clock,
) -> Result<TrainingRun> {
    cfg.validate()?;
    arch.validate()?;
    if shards.is_empty() {
        return Err(Error::Config("no client shards".into()));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.client_id != i {
            return Err(Error::Config(alloc::format!(
                "shard at position {i} has client id {}",
                s.client_id
            )));
        }
        check_dim("shard input_dim", arch.input_dim, s.data.input_dim)?;
        check_dim("shard classes", arch.num_classes, s.data.num_classes)?;
    }
    if cfg.eval_every > 0 && test.is_empty() {
        return Err(Error::Config(
            "evaluation requested without a test set".into(),
        ));
    }

    let n = shards.len();
    let weights: Vec<f64> = shards.iter().map(|s| s.weight).collect();
    let (global_dist, shifts) = global_statistics(shards, cfg.seed)?;
    let class_weights: Vec<Vec<f64>> = match cfg.strategy {
        StrategySpec::Reweight => shards
            .iter()
            .map(|s| reweight_class_weights(&s.label_dist, &global_dist))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let mut controls = match cfg.strategy {
        StrategySpec::Scaffold => Some(ControlState::zeros(arch.param_count(), 0..n)),
        _ => None,
    };

    let mut w = arch.init_params(cfg.seed);
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let eta = cfg.learning_rate(t);
        let mut hyper: LocalHyper = cfg.hyper;
        hyper.sgd.learning_rate = eta;
        let selected = sample_clients(n, cfg.fraction, t, cfg.seed);

        let mut updates = Vec::with_capacity(selected.len());
        let mut control_updates = Vec::new();
        let mut loss_sum = 0.0;
        for &i in &selected {
            let aux = match (&cfg.strategy, &controls) {
                (StrategySpec::FedShift, _) => LocalAux::Shift(&shifts[i]),
                (StrategySpec::Reweight, _) => LocalAux::ClassWeights(&class_weights[i]),
                (StrategySpec::Scaffold, Some(cs)) => LocalAux::Scaffold {
                    client_control: cs.client(i)?,
                    server_control: &cs.server_control,
                },
                _ => LocalAux::None,
            };
            let out = local_update(&cfg.strategy, arch, &w, &shards[i], &hyper, t, aux)?;
            loss_sum += out.mean_loss;
            if let Some((c_new, delta)) = out.control {
                control_updates.push((i, c_new, delta));
            }
            updates.push((i, out.params));
        }
        if let Some(cs) = controls.as_mut() {
            cs.apply_round(&control_updates, n)?;
        }
        w = aggregate(&w, &updates, &weights, cfg.renormalize)?;
        if !w.is_finite() {
            return Err(Error::NonFinite("global model"));
        }

        let round = t + 1;
        let evaluate = cfg.eval_every > 0 && (round % cfg.eval_every == 0 || round == cfg.rounds);
        let test_accuracy = if evaluate {
            Some(evaluate_accuracy(&w, arch, test)?)
        } else {
            None
        };
        records.push(RoundRecord {
            round,
            participants: selected,
            test_accuracy,
            train_loss: loss_sum / updates.len() as f64,
            eta,
            wall_time: clock.elapsed_secs(),
        });
    }

    Ok(TrainingRun {
        records,
        final_params: w,
        global_dist,
        shifts: match cfg.strategy {
            StrategySpec::FedShift => shifts,
            _ => Vec::new(),
        },
    })
}
