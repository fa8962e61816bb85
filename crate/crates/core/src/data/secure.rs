//! Simulated secure aggregation with pairwise additive masks.
//!
//! Every pair `(i, j)` with `i < j` shares a mask vector `m_ij`; client `i`
//! adds it and client `j` subtracts it. The masks cancel in the server's sum,
//! so the server learns only `sum_i w_i * P_i` while each individual message
//! is dominated by mask noise. No cryptography is involved: the masks come
//! from a seeded generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::LabelDist;
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_for, stream};

/// Masks are uniform in `[-MASK_SCALE, MASK_SCALE]` per coordinate.
pub const MASK_SCALE: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAggregation {
    pub result: LabelDist,
    /// The masked vector each client sent, in client order.
    pub messages: Vec<Vec<f64>>,
}

fn pair_mask(seed: u64, i: usize, j: usize, k: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &[stream::MASK, i as u64, j as u64]);
    (0..k)
        .map(|_| rng.random_range(-MASK_SCALE..=MASK_SCALE))
        .collect()
}

/// Weighted sum `sum_i weights[i] * dists[i]` computed from masked messages.
pub fn secure_aggregate_dist(
    dists: &[LabelDist],
    weights: &[f64],
    seed: u64,
) -> Result<MaskedAggregation> {
    check_dim("aggregation weights", dists.len(), weights.len())?;
    let first = dists
        .first()
        .ok_or_else(|| Error::Config("no distributions to aggregate".into()))?;
    let k = first.num_classes();
    for d in dists {
        check_dim("aggregated distribution", k, d.num_classes())?;
    }
    if !weights.iter().all(|&w| w.is_finite() && w >= 0.0) {
        return Err(Error::Config(
            "aggregation weights must be non-negative".into(),
        ));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(alloc::format!(
            "aggregation weights sum to {wsum}, not 1"
        )));
    }

    let n = dists.len();
    let mut messages: Vec<Vec<f64>> = dists
        .iter()
        .zip(weights)
        .map(|(d, &w)| d.probs().iter().map(|p| w * p).collect())
        .collect();
    // Masking needs at least one pair; a single client sends its payload.
    if n >= 2 {
        for i in 0..n {
            for j in i + 1..n {
                let m = pair_mask(seed, i, j, k);
                for c in 0..k {
                    messages[i][c] += m[c];
                    messages[j][c] -= m[c];
                }
            }
        }
    }

    let mut sum = vec![0.0; k];
    for msg in &messages {
        for (s, v) in sum.iter_mut().zip(msg) {
            *s += v;
        }
    }
    // Cancellation leaves ~1e-13 residue; clamp and renormalize onto the simplex.
    for s in &mut sum {
        if *s < 0.0 {
            *s = 0.0;
        }
    }
    let total: f64 = sum.iter().sum();
    sum.iter_mut().for_each(|s| *s /= total);
    Ok(MaskedAggregation {
        result: LabelDist::new(sum)?,
        messages,
    })
}
