//! Client-side local update procedures.
//!
//! Every strategy runs the same loop: `E` epochs over a per-epoch shuffle of
//! the shard, mini-batches of size `B` (the final partial batch is kept), one
//! SGD-with-momentum step per batch starting from a fresh optimizer state.
//! The strategies differ only in the loss or in a gradient correction:
//!
//! | strategy  | change to the FedAvg step                           |
//! |-----------|-----------------------------------------------------|
//! | FedAvg    | none                                                |
//! | FedShift  | loss on `f(w; x) + s_i`                             |
//! | FedProx   | gradient `+ 2 * lambda * (w - w_global)`            |
//! | SCAFFOLD  | gradient `+ (c - c_i)`                              |
//! | Reweight  | per-class loss weights `P(k) / P_i(k)`              |
//!
//! FedProx uses `2 * lambda`, the derivative of `lambda * ||w - w_global||^2`
//! (not the `lambda / 2` convention).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{ClientShard, LabelDist, ShiftVector};
use crate::error::{check_dim, Error, Result};
use crate::nn::{self, Architecture, LossConfig, OptState, ParamVector, SgdHyper};
use crate::rng::{rng_for, stream};

/// Which local procedure a run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum StrategySpec {
    FedAvg,
    /// `lambda >= 0`; zero reduces to FedAvg exactly.
    FedProx {
        lambda: f64,
    },
    Scaffold,
    FedShift,
    Reweight,
}

impl StrategySpec {
    pub const ALL_NAMES: [&'static str; 5] =
        ["fedavg", "fedprox", "scaffold", "fedshift", "reweight"];

    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::FedAvg => "fedavg",
            StrategySpec::FedProx { .. } => "fedprox",
            StrategySpec::Scaffold => "scaffold",
            StrategySpec::FedShift => "fedshift",
            StrategySpec::Reweight => "reweight",
        }
    }

    /// Parses a strategy name; `prox_lambda` is used only for FedProx.
    pub fn from_name(name: &str, prox_lambda: f64) -> Result<Self> {
        let spec = match name.to_ascii_lowercase().as_str() {
            "fedavg" => StrategySpec::FedAvg,
            "fedprox" => StrategySpec::FedProx {
                lambda: prox_lambda,
            },
            "scaffold" => StrategySpec::Scaffold,
            "fedshift" => StrategySpec::FedShift,
            "reweight" | "reweighting" => StrategySpec::Reweight,
            other => {
                return Err(Error::Config(alloc::format!(
                    "unknown strategy `{other}` (expected one of {})",
                    Self::ALL_NAMES.join(", ")
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let StrategySpec::FedProx { lambda } = self {
            if !(lambda.is_finite() && *lambda >= 0.0) {
                return Err(Error::Config("fedprox lambda must be >= 0".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::FedProx { lambda } => write!(f, "fedprox(lambda={lambda})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    /// Accepts plain names and `fedprox(lambda=0.01)` / `fedprox:0.01`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("fedprox") {
            let rest = rest.trim();
            if rest.is_empty() {
                return Self::from_name("fedprox", 0.01);
            }
            let num = rest
                .trim_start_matches(['(', ':'])
                .trim_end_matches(')')
                .trim_start_matches("lambda=");
            let lambda: f64 = num
                .parse()
                .map_err(|_| Error::Config(alloc::format!("bad fedprox lambda in `{s}`")))?;
            return Self::from_name("fedprox", lambda);
        }
        Self::from_name(s, 0.0)
    }
}

/// Per-round local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdHyper,
    /// Base seed for the per-epoch shuffles.
    pub seed: u64,
}

impl LocalHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        self.sgd.validate()
    }
}

/// SGD steps per round: `E * ceil(n / B)`.
pub fn iterations_per_round(shard_size: usize, hyper: &LocalHyper) -> usize {
    hyper.epochs * shard_size.div_ceil(hyper.batch_size)
}

/// Sample order for one epoch, derived from `(seed, round, client, epoch)`.
pub fn epoch_order(
    len: usize,
    seed: u64,
    round: usize,
    client_id: usize,
    epoch: usize,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = rng_for(
        seed,
        &[
            stream::SHUFFLE,
            round as u64,
            client_id as u64,
            epoch as u64,
        ],
    );
    order.shuffle(&mut rng);
    order
}

/// Importance weights `w_k = P(k) / P_i(k)`, rescaled so that
/// `sum_k P_i(k) * w_k = 1`.
pub fn reweight_class_weights(local: &LabelDist, global: &LabelDist) -> Result<Vec<f64>> {
    check_dim(
        "reweight distributions",
        global.num_classes(),
        local.num_classes(),
    )?;
    if !local.is_strictly_positive() || !global.is_strictly_positive() {
        return Err(Error::Precondition(
            "reweighting needs smoothed distributions".into(),
        ));
    }
    let mut w: Vec<f64> = global
        .probs()
        .iter()
        .zip(local.probs())
        .map(|(g, l)| g / l)
        .collect();
    let norm: f64 = w.iter().zip(local.probs()).map(|(w, l)| w * l).sum();
    w.iter_mut().for_each(|v| *v /= norm);
    Ok(w)
}

/// SCAFFOLD control variates: one per client plus the server's.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    pub client_controls: BTreeMap<usize, Vec<f64>>,
    pub server_control: Vec<f64>,
}

impl ControlState {
    pub fn zeros(param_count: usize, client_ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            client_controls: client_ids
                .into_iter()
                .map(|id| (id, vec![0.0; param_count]))
                .collect(),
            server_control: vec![0.0; param_count],
        }
    }

    pub fn client(&self, id: usize) -> Result<&[f64]> {
        self.client_controls
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(alloc::format!("no control variate for client {id}")))
    }

    /// Commits client updates and moves the server control by
    /// `(m / N) * mean(deltas)`, i.e. `sum(deltas) / N`.
    pub fn apply_round(
        &mut self,
        updates: &[(usize, Vec<f64>, Vec<f64>)],
        num_clients: usize,
    ) -> Result<()> {
        let n = num_clients as f64;
        let mut sorted: Vec<&(usize, Vec<f64>, Vec<f64>)> = updates.iter().collect();
        sorted.sort_by_key(|u| u.0);
        for (id, new_control, delta) in sorted {
            check_dim("control delta", self.server_control.len(), delta.len())?;
            let slot = self.client_controls.get_mut(id).ok_or_else(|| {
                Error::Config(alloc::format!("no control variate for client {id}"))
            })?;
            slot.clone_from(new_control);
            for (c, d) in self.server_control.iter_mut().zip(delta) {
                *c += d / n;
            }
        }
        Ok(())
    }
}

/// Strategy-specific inputs for one local update.
#[derive(Debug, Clone, Copy)]
pub enum LocalAux<'a> {
    None,
    Shift(&'a ShiftVector),
    ClassWeights(&'a [f64]),
    Scaffold {
        client_control: &'a [f64],
        server_control: &'a [f64],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub params: ParamVector,
    /// Mean mini-batch loss over the round (strategy loss, without the
    /// proximal term).
    pub mean_loss: f64,
    pub steps: usize,
    /// SCAFFOLD only: `(c_i', c_i' - c_i)`.
    pub control: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs one client's local training from `w_global`.
///
/// `w_global`, the shard and the controls are only read; the result is a new
/// parameter vector plus, for SCAFFOLD, the client's new control and its
/// delta for the server.
pub fn local_update(
    spec: &StrategySpec,
    arch: &Architecture,
    w_global: &ParamVector,
    shard: &ClientShard,
    hyper: &LocalHyper,
    round: usize,
    aux: LocalAux<'_>,
) -> Result<LocalOutcome> {
    spec.validate()?;
    hyper.validate()?;
    if shard.data.is_empty() {
        return Err(Error::EmptyShard(shard.client_id));
    }
    let p = arch.param_count();
    check_dim("global model", p, w_global.len())?;

    let loss_cfg = match (spec, aux) {
        (StrategySpec::FedShift, LocalAux::Shift(s)) => LossConfig::shifted(s.values().to_vec()),
        (StrategySpec::Reweight, LocalAux::ClassWeights(w)) => LossConfig::weighted(w.to_vec()),
        (StrategySpec::FedAvg | StrategySpec::FedProx { .. }, LocalAux::None) => {
            LossConfig::default()
        }
        (
            StrategySpec::Scaffold,
            LocalAux::Scaffold {
                client_control,
                server_control,
            },
        ) => {
            check_dim("client control", p, client_control.len())?;
            check_dim("server control", p, server_control.len())?;
            LossConfig::default()
        }
        (spec, aux) => {
            return Err(Error::Precondition(alloc::format!(
                "{} received mismatched inputs {}",
                spec.name(),
                aux_name(&aux)
            )))
        }
    };
    loss_cfg.validate(arch.num_classes)?;

    let correction: Option<Vec<f64>> = match aux {
        LocalAux::Scaffold {
            client_control,
            server_control,
        } => Some(
            server_control
                .iter()
                .zip(client_control)
                .map(|(c, ci)| c - ci)
                .collect(),
        ),
        _ => None,
    };
    let prox = match spec {
        StrategySpec::FedProx { lambda } if *lambda != 0.0 => Some(2.0 * lambda),
        _ => None,
    };

    let mut w = w_global.clone();
    let mut opt = OptState::new(p, hyper.sgd);
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for epoch in 0..hyper.epochs {
        let order = epoch_order(shard.data.len(), hyper.seed, round, shard.client_id, epoch);
        for chunk in order.chunks(hyper.batch_size) {
            let batch = shard.data.batch(chunk)?;
            let (loss, mut g) = nn::loss_and_grad(&w, arch, &batch, &loss_cfg)?;
            if let Some(coef) = prox {
                for ((gv, wv), wg) in g.iter_mut().zip(w.iter()).zip(w_global.iter()) {
                    *gv += coef * (wv - wg);
                }
            }
            if let Some(corr) = &correction {
                for (gv, &cv) in g.iter_mut().zip(corr) {
                    if cv != 0.0 {
                        *gv += cv;
                    }
                }
            }
            opt.apply(&mut w, &g)?;
            loss_sum += loss;
            steps += 1;
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("local update"));
    }

    let control = match aux {
        LocalAux::Scaffold {
            client_control,
            server_control,
        } => {
            let scale = 1.0 / (steps as f64 * hyper.sgd.learning_rate);
            let new_control: Vec<f64> = client_control
                .iter()
                .zip(server_control)
                .zip(w_global.iter().zip(w.iter()))
                .map(|((ci, c), (wg, wl))| ci - c + (wg - wl) * scale)
                .collect();
            let delta = new_control
                .iter()
                .zip(client_control)
                .map(|(n, o)| n - o)
                .collect();
            Some((new_control, delta))
        }
        _ => None,
    };

    Ok(LocalOutcome {
        params: w,
        mean_loss: loss_sum / steps as f64,
        steps,
        control,
    })
}

fn aux_name(aux: &LocalAux<'_>) -> String {
    match aux {
        LocalAux::None => "none".into(),
        LocalAux::Shift(_) => "a logit shift".into(),
        LocalAux::ClassWeights(_) => "class weights".into(),
        LocalAux::Scaffold { .. } => "control variates".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{estimate_label_dist, shards_from_datasets, Dataset, GaussianClasses};

    fn toy_shard(seed: u64, n: usize) -> ClientShard {
        let g = GaussianClasses::new(vec![vec![-1.0, 0.5], vec![1.0, -0.5], vec![0.0, 2.0]], 0.7)
            .unwrap();
        let data = g.balanced_dataset(n, seed, 3);
        shards_from_datasets(vec![data]).unwrap().remove(0)
    }

    fn hyper() -> LocalHyper {
        LocalHyper {
            epochs: 2,
            batch_size: 7,
            sgd: SgdHyper::default(),
            seed: 5,
        }
    }

    #[test]
    fn iterations_examples() {
        let h = |e, b| LocalHyper {
            epochs: e,
            batch_size: b,
            ..hyper()
        };
        assert_eq!(iterations_per_round(100, &h(5, 40)), 15);
        assert_eq!(iterations_per_round(40, &h(1, 40)), 1);
        assert_eq!(iterations_per_round(1, &h(20, 40)), 20);
    }

    #[test]
    fn step_count_matches_iterations() {
        let arch = Architecture::logistic(2, 3).unwrap();
        let shard = toy_shard(1, 30);
        let w0 = arch.init_params(0);
        let out = local_update(
            &StrategySpec::FedAvg,
            &arch,
            &w0,
            &shard,
            &hyper(),
            0,
            LocalAux::None,
        )
        .unwrap();
        assert_eq!(out.steps, iterations_per_round(30, &hyper()));
    }

    #[test]
    fn mismatched_aux_is_rejected() {
        let arch = Architecture::logistic(2, 3).unwrap();
        let shard = toy_shard(1, 10);
        let w0 = arch.init_params(0);
        let err = local_update(
            &StrategySpec::FedShift,
            &arch,
            &w0,
            &shard,
            &hyper(),
            0,
            LocalAux::None,
        );
        assert!(matches!(err, Err(Error::Precondition(_))));
        let s = ShiftVector::zeros(3);
        let err = local_update(
            &StrategySpec::FedAvg,
            &arch,
            &w0,
            &shard,
            &hyper(),
            0,
            LocalAux::Shift(&s),
        );
        assert!(err.is_err());
    }

    #[test]
    fn empty_shard_is_an_error() {
        let arch = Architecture::logistic(2, 3).unwrap();
        let shard = ClientShard {
            client_id: 4,
            data: Dataset::empty(2, 3),
            label_dist: estimate_label_dist(&[], 3).unwrap(),
            weight: 1.0,
        };
        let w0 = arch.init_params(0);
        let err = local_update(
            &StrategySpec::FedAvg,
            &arch,
            &w0,
            &shard,
            &hyper(),
            0,
            LocalAux::None,
        );
        assert_eq!(err, Err(Error::EmptyShard(4)));
    }

    #[test]
    fn reweight_weights_are_normalized_importance_ratios() {
        let local = LabelDist::new(vec![0.8, 0.1, 0.1]).unwrap();
        let global = LabelDist::uniform(3);
        let w = reweight_class_weights(&local, &global).unwrap();
        let norm: f64 = w.iter().zip(local.probs()).map(|(a, b)| a * b).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in StrategySpec::ALL_NAMES {
            let s: StrategySpec = name.parse().unwrap();
            assert_eq!(s.name(), name);
        }
        assert_eq!(
            "fedprox(lambda=0.1)".parse::<StrategySpec>().unwrap(),
            StrategySpec::FedProx { lambda: 0.1 }
        );
        assert_eq!(
            "fedprox:0".parse::<StrategySpec>().unwrap(),
            StrategySpec::FedProx { lambda: 0.0 }
        );
        assert!("fedprox:-1".parse::<StrategySpec>().is_err());
        assert!("fednova".parse::<StrategySpec>().is_err());
    }

    #[test]
    fn control_state_update_moves_server_by_sum_over_n() {
        let mut cs = ControlState::zeros(2, 0..4);
        cs.apply_round(
            &[
                (1, vec![1.0, 2.0], vec![1.0, 2.0]),
                (3, vec![3.0, 0.0], vec![3.0, 0.0]),
            ],
            4,
        )
        .unwrap();
        assert_eq!(cs.server_control, vec![1.0, 0.5]);
        assert_eq!(cs.client(3).unwrap(), &[3.0, 0.0]);
        assert_eq!(cs.client(0).unwrap(), &[0.0, 0.0]);
    }
}
