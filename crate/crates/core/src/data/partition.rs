use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{rng_for, stream};

/// Maximum number of re-draws when some client ends up empty.
const MAX_RETRIES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("dirichlet alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric Dirichlet draw via normalized Gamma(alpha, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::Config(alloc::format!("gamma({alpha}): {e}")))?;
    // All-zero draws only happen through underflow at tiny alpha.
    for _ in 0..1000 {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(g.into_iter().map(|v| v / sum).collect());
        }
    }
    Err(Error::Partition(
        "dirichlet draw underflowed repeatedly".into(),
    ))
}

/// Splits `total` into integer parts proportional to `shares` using the
/// largest-remainder method; ties go to the lower index. Parts sum to
/// `total` exactly.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|&e| math::floor(e) as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - parts[a] as f64;
        let rb = exact[b] - parts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

fn partition_once(
    labels: &[usize],
    num_classes: usize,
    cfg: &PartitionConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); cfg.num_clients];
    for class in 0..num_classes {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng = rng_for(seed, &[stream::PARTITION, class as u64]);
        idx.shuffle(&mut rng);
        let p = sample_dirichlet(cfg.alpha, cfg.num_clients, &mut rng)?;
        let sizes = largest_remainder(&p, idx.len());
        let mut start = 0;
        for (client, size) in sizes.into_iter().enumerate() {
            out[client].extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    for set in &mut out {
        set.sort_unstable();
    }
    Ok(out)
}

/// Label-skewed split of sample indices across clients.
///
/// For every class, `p ~ Dir_N(alpha)` and the (shuffled) class indices are
/// cut into contiguous chunks of largest-remainder sizes. If any client ends
/// up empty the whole partition is redrawn with `seed + 1`, up to 100 times.
pub fn dirichlet_partition(labels: &[usize], cfg: &PartitionConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::Config("cannot partition an empty label set".into()));
    }
    if labels.len() < cfg.num_clients {
        return Err(Error::Partition(alloc::format!(
            "{} samples cannot fill {} clients",
            labels.len(),
            cfg.num_clients
        )));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    for attempt in 0..=MAX_RETRIES {
        let parts = partition_once(labels, num_classes, cfg, cfg.seed.wrapping_add(attempt))?;
        if parts.iter().all(|p| !p.is_empty()) {
            return Ok(parts);
        }
    }
    Err(Error::Partition(alloc::format!(
        "some client stayed empty after {MAX_RETRIES} re-draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        let parts = largest_remainder(&[0.333, 0.333, 0.334], 100);
        assert_eq!(parts.iter().sum::<usize>(), 100);
        assert_eq!(largest_remainder(&[1.0], 7), vec![7]);
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = vec![0, 1, 2, 1, 0];
        let cfg = PartitionConfig {
            num_clients: 1,
            alpha: 0.1,
            seed: 4,
        };
        assert_eq!(
            dirichlet_partition(&labels, &cfg).unwrap(),
            vec![vec![0, 1, 2, 3, 4]]
        );
    }

    #[test]
    fn partition_is_disjoint_complete_and_seeded() {
        let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
        let cfg = PartitionConfig {
            num_clients: 7,
            alpha: 0.3,
            seed: 21,
        };
        let parts = dirichlet_partition(&labels, &cfg).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| !p.is_empty()));
        assert_eq!(parts, dirichlet_partition(&labels, &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PartitionConfig {
            num_clients: 2,
            alpha: 0.0,
            seed: 0,
        };
        assert!(dirichlet_partition(&[0, 1], &cfg).is_err());
        let cfg = PartitionConfig {
            num_clients: 2,
            alpha: 1.0,
            seed: 0,
        };
        assert!(dirichlet_partition(&[], &cfg).is_err());
        assert!(dirichlet_partition(&[0], &cfg).is_err());
    }

    #[test]
    fn dirichlet_draws_are_on_simplex() {
        let mut rng = rng_for(3, &[]);
        for &alpha in &[0.01, 0.1, 1.0, 1e6] {
            let p = sample_dirichlet(alpha, 10, &mut rng).unwrap();
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
