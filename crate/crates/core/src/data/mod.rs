//! Client datasets and label statistics.
//!
//! Covers synthetic data with controlled label shift, Dirichlet non-IID
//! partitioning, add-one smoothed label distributions, a pairwise-mask
//! simulation of secure aggregation, and the per-client classifier shift
//! `s_k = ln(P_i(k) / P(k))`.

mod dist;
mod partition;
mod secure;
mod synth;

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::Batch;

pub use dist::{compute_shift, estimate_label_dist, LabelDist, ShiftVector};
pub use partition::{dirichlet_partition, largest_remainder, sample_dirichlet, PartitionConfig};
pub use secure::{secure_aggregate_dist, MaskedAggregation, MASK_SCALE};
pub use synth::{synth_label_shift, GaussianClasses, SynthData, SynthSpec};

/// Labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub input_dim: usize,
    pub num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(
                "dataset needs input_dim >= 1 and K >= 2".into(),
            ));
        }
        check_dim("dataset features", labels.len() * input_dim, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Config(alloc::format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            input_dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn empty(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (
            &self.features[i * self.input_dim..(i + 1) * self.input_dim],
            self.labels[i],
        )
    }

    pub fn push(&mut self, x: &[f64], y: usize) {
        debug_assert_eq!(x.len(), self.input_dim);
        debug_assert!(y < self.num_classes);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.input_dim, self.num_classes);
        out.features.reserve(indices.len() * self.input_dim);
        for &i in indices {
            let (x, y) = self.sample(i);
            out.push(x, y);
        }
        out
    }

    /// Concatenates datasets with matching shapes.
    pub fn concat<'a, I: IntoIterator<Item = &'a Dataset>>(parts: I) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Config("cannot concatenate zero datasets".into()))?;
        let mut out = first.clone();
        for d in iter {
            check_dim("concatenated input_dim", out.input_dim, d.input_dim)?;
            check_dim("concatenated num_classes", out.num_classes, d.num_classes)?;
            out.features.extend_from_slice(&d.features);
            out.labels.extend_from_slice(&d.labels);
        }
        Ok(out)
    }

    pub fn inputs(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.input_dim, self.features.clone())
            .expect("dataset shape is validated on construction")
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let sub = self.subset(indices);
        let inputs = Matrix::from_vec(sub.len(), self.input_dim, sub.features)?;
        Batch::new(inputs, sub.labels, self.num_classes)
    }

    pub fn full_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs(), self.labels.clone(), self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// One client's local data `D_i`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientShard {
    pub client_id: usize,
    pub data: Dataset,
    /// Add-one smoothed estimate of `P_i(y)` from `data`.
    pub label_dist: LabelDist,
    /// `|D_i| / |D|`.
    pub weight: f64,
}

/// Builds shards from index sets over a pooled dataset. Weights are
/// `|D_i| / |D|` with `|D|` the total number of assigned samples.
pub fn build_shards(pool: &Dataset, partition: &[Vec<usize>]) -> Result<Vec<ClientShard>> {
    let total: usize = partition.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Config("partition assigns no samples".into()));
    }
    partition
        .iter()
        .enumerate()
        .map(|(client_id, idx)| {
            if idx.is_empty() {
                return Err(Error::EmptyShard(client_id));
            }
            let data = pool.subset(idx);
            let label_dist = estimate_label_dist(data.labels(), pool.num_classes)?;
            Ok(ClientShard {
                client_id,
                weight: idx.len() as f64 / total as f64,
                data,
                label_dist,
            })
        })
        .collect()
}

/// Builds shards from per-client datasets.
pub fn shards_from_datasets(datasets: Vec<Dataset>) -> Result<Vec<ClientShard>> {
    let total: usize = datasets.iter().map(Dataset::len).sum();
    if total == 0 {
        return Err(Error::Config("no client data".into()));
    }
    datasets
        .into_iter()
        .enumerate()
        .map(|(client_id, data)| {
            if data.is_empty() {
                return Err(Error::EmptyShard(client_id));
            }
            let label_dist = estimate_label_dist(data.labels(), data.num_classes)?;
            Ok(ClientShard {
                client_id,
                weight: data.len() as f64 / total as f64,
                data,
                label_dist,
            })
        })
        .collect()
}

/// A synthetic non-IID benchmark: a balanced pool of Gaussian-class samples
/// split across clients by a Dirichlet partition, plus a balanced test set
/// from the same classes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Class means are drawn from `N(0, separation^2 I)`.
    pub separation: f64,
    pub noise_sigma: f64,
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// The desk-scale label-skew benchmark: 10 classes in 32 dimensions with
    /// means drawn at scale 0.3 under unit noise, 20k training samples split
    /// over 10 clients with `alpha = 0.1`, and 2k test samples.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_classes: 10,
            input_dim: 32,
            train_samples: 20_000,
            test_samples: 2_000,
            separation: 0.3,
            noise_sigma: 1.0,
            num_clients: 10,
            alpha: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub classes: GaussianClasses,
    pub shards: Vec<ClientShard>,
    pub test: Dataset,
}

pub fn gaussian_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    let classes = GaussianClasses::random(
        spec.num_classes,
        spec.input_dim,
        spec.separation,
        spec.noise_sigma,
        spec.seed,
    )?;
    let pool = classes.balanced_dataset(spec.train_samples, spec.seed, 10);
    let test = classes.balanced_dataset(spec.test_samples, spec.seed, 11);
    let partition = dirichlet_partition(
        pool.labels(),
        &PartitionConfig {
            num_clients: spec.num_clients,
            alpha: spec.alpha,
            seed: spec.seed,
        },
    )?;
    Ok(Benchmark {
        shards: build_shards(&pool, &partition)?,
        classes,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn subset_and_batch_gather_rows() {
        let d = Dataset::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 2, 1]).unwrap();
        let b = d.batch(&[2, 0]).unwrap();
        assert_eq!(b.labels, vec![1, 0]);
        assert_eq!(b.inputs.row(0), &[4.0, 5.0]);
        assert_eq!(d.class_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        assert!(Dataset::new(1, 2, vec![0.0], vec![2]).is_err());
        assert!(Dataset::new(2, 2, vec![0.0], vec![0]).is_err());
    }

    #[test]
    fn shard_weights_sum_to_one() {
        let d = Dataset::new(1, 2, vec![0.0; 10], vec![0, 1, 0, 1, 0, 1, 0, 0, 0, 1]).unwrap();
        let shards = build_shards(&d, &[vec![0, 1, 2], vec![3, 4, 5, 6, 7, 8, 9]]).unwrap();
        let total: f64 = shards.iter().map(|s| s.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((shards[0].weight - 0.3).abs() < 1e-15);
        // counts (2, 1) -> (3/5, 2/5)
        assert!((shards[0].label_dist.probs()[0] - 0.6).abs() < 1e-15);
        assert!(matches!(
            build_shards(&d, &[vec![0], vec![]]),
            Err(Error::EmptyShard(1))
        ));
    }
}
