use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The run left the region the constants were certified on.
    Inconclusive,
    /// The instance cannot meet the statement's hypotheses.
    Unsatisfiable,
}

/// Outcome of one numerical check. Curves are aligned by index; for
/// upper-bound checks `measured <= bound` is the claim, for lower-bound
/// checks `measured >= bound`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckReport {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub bound_curve: Vec<f64>,
    pub measured_curve: Vec<f64>,
    pub pass: bool,
    /// Smallest relative headroom over all compared points; negative on
    /// failure.
    pub margin: f64,
    pub status: CheckStatus,
    /// Auxiliary measurements (per-client values, control runs, ...).
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub(crate) fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            constants: BTreeMap::new(),
            bound_curve: Vec::new(),
            measured_curve: Vec::new(),
            pass: false,
            margin: f64::NEG_INFINITY,
            status: CheckStatus::Fail,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub(crate) fn detail(&mut self, key: &str, value: f64) {
        self.details.insert(key.to_string(), value);
    }

    pub(crate) fn constant(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    pub(crate) fn finish(&mut self, pass: bool) {
        self.pass = pass;
        self.status = if pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
    }
}

/// Monte-Carlo slack `3 / sqrt(trials)`.
pub fn mc_slack(trials: usize) -> f64 {
    3.0 / math::sqrt(trials as f64)
}

/// Relative headroom of `measured <= limit`.
pub(crate) fn upper_margin(measured: f64, limit: f64) -> f64 {
    (limit - measured) / limit.abs().max(f64::MIN_POSITIVE)
}

/// Relative headroom of `measured >= limit`.
pub(crate) fn lower_margin(measured: f64, limit: f64) -> f64 {
    (measured - limit) / limit.abs().max(f64::MIN_POSITIVE)
}

/// Constants of the strongly convex / smooth setting.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TheoryConstants {
    pub mu: f64,
    pub beta: f64,
    pub g: f64,
    pub sigma: f64,
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: f64,
    pub local_steps: usize,
    pub rounds: usize,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= self.beta) {
            return Err(Error::Precondition(alloc::format!(
                "need 0 < mu <= beta, got mu={} beta={}",
                self.mu,
                self.beta
            )));
        }
        if !(self.eta > 0.0 && self.eta * self.mu < 1.0) {
            return Err(Error::Precondition("need 0 < eta * mu < 1".into()));
        }
        if !(self.g > 0.0 && self.sigma >= 0.0) {
            return Err(Error::Precondition("need G > 0 and sigma >= 0".into()));
        }
        Ok(())
    }

    /// `(1 - eta mu)^(I + 1)`.
    pub fn round_contraction(&self) -> f64 {
        math::powi(1.0 - self.eta * self.mu, self.local_steps as i32 + 1)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("mu".to_string(), self.mu);
        m.insert("beta".to_string(), self.beta);
        m.insert("G".to_string(), self.g);
        m.insert("sigma".to_string(), self.sigma);
        m.insert("eta".to_string(), self.eta);
        m.insert("I".to_string(), self.local_steps as f64);
        m.insert("T".to_string(), self.rounds as f64);
        for (k, v) in [
            ("delta", self.delta),
            ("zeta", self.zeta),
            ("gamma", self.gamma),
        ] {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }
}
