//! Synthetic classification data with pure label shift: every client shares
//! the class conditionals `x | y=k ~ N(mean_k, sigma^2 I)` but draws labels
//! from its own prior.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{shards_from_datasets, ClientShard, Dataset, LabelDist};
use crate::error::{check_dim, Error, Result};
use crate::linalg::dist_sq;
use crate::math;
use crate::rng::{rng_for, stream};

/// Isotropic Gaussian class conditionals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianClasses {
    pub means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
}

impl GaussianClasses {
    pub fn new(means: Vec<Vec<f64>>, noise_sigma: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Config("need at least two class means".into()));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Config("class means must be non-empty".into()));
        }
        for m in &means {
            check_dim("class mean", d, m.len())?;
        }
        for i in 0..means.len() {
            for j in 0..i {
                if dist_sq(&means[i], &means[j]) == 0.0 {
                    return Err(Error::Config(alloc::format!(
                        "class means {j} and {i} coincide"
                    )));
                }
            }
        }
        if !(noise_sigma.is_finite() && noise_sigma > 0.0) {
            return Err(Error::Config("noise sigma must be positive".into()));
        }
        Ok(Self { means, noise_sigma })
    }

    /// Means drawn i.i.d. from `N(0, separation^2 I)`.
    pub fn random(
        num_classes: usize,
        input_dim: usize,
        separation: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed, &[stream::SYNTH, 0]);
        let means = (0..num_classes)
            .map(|_| {
                (0..input_dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::new(means, noise_sigma)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, label: usize, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.means[label]
                .iter()
                .map(|m| m + self.noise_sigma * rng.sample::<f64, _>(StandardNormal)),
        );
    }

    pub fn sample_dataset<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Dataset {
        let mut data = Dataset::empty(self.input_dim(), self.num_classes());
        let mut x = Vec::with_capacity(self.input_dim());
        for &y in labels {
            self.sample_into(y, rng, &mut x);
            data.push(&x, y);
        }
        data
    }

    /// `n` samples with labels cycling through the classes, so class counts
    /// differ by at most one.
    pub fn balanced_dataset(&self, n: usize, seed: u64, stream_id: u64) -> Dataset {
        let mut rng = rng_for(seed, &[stream::SYNTH, stream_id]);
        let labels: Vec<usize> = (0..n).map(|i| i % self.num_classes()).collect();
        self.sample_dataset(&labels, &mut rng)
    }

    /// Bayes posterior `p(y | x)` under the given class prior.
    pub fn posterior(&self, x: &[f64], prior: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.noise_sigma * self.noise_sigma);
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(prior)
            .map(|(m, &p)| {
                if p > 0.0 {
                    math::ln(p) - dist_sq(x, m) * inv
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut post: Vec<f64> = logs.iter().map(|l| math::exp(l - max)).collect();
        let s: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= s);
        post
    }
}

pub(crate) fn sample_label<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding can leave acc slightly below 1; fall back to the last
    // class with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Parameters for [`synth_label_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: GaussianClasses,
    pub client_priors: Vec<LabelDist>,
    pub samples_per_client: usize,
    pub test_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub shards: Vec<ClientShard>,
    pub test: Dataset,
    /// The mixture prior `sum_i weight_i * P_i` the test set is drawn from.
    pub global_prior: LabelDist,
}

/// Generates one shard per client prior plus a held-out test set drawn from
/// the mixture of the client priors.
pub fn synth_label_shift(spec: &SynthSpec) -> Result<SynthData> {
    let k = spec.classes.num_classes();
    if spec.client_priors.is_empty() {
        return Err(Error::Config("need at least one client prior".into()));
    }
    if spec.samples_per_client == 0 {
        return Err(Error::Config("samples_per_client must be positive".into()));
    }
    for p in &spec.client_priors {
        check_dim("client prior", k, p.num_classes())?;
    }
    let n = spec.client_priors.len() as f64;
    let mut global = alloc::vec![0.0; k];
    for p in &spec.client_priors {
        for (g, v) in global.iter_mut().zip(p.probs()) {
            *g += v / n;
        }
    }
    if let Some(dead) = global.iter().position(|&g| g <= 0.0) {
        return Err(Error::Config(alloc::format!(
            "class {dead} has zero probability for every client"
        )));
    }
    let global_prior = LabelDist::new(global)?;

    let datasets: Vec<Dataset> = spec
        .client_priors
        .iter()
        .enumerate()
        .map(|(i, prior)| {
            let mut rng = rng_for(spec.seed, &[stream::SYNTH, 1, i as u64]);
            let labels: Vec<usize> = (0..spec.samples_per_client)
                .map(|_| sample_label(prior.probs(), &mut rng))
                .collect();
            spec.classes.sample_dataset(&labels, &mut rng)
        })
        .collect();
    let shards = shards_from_datasets(datasets)?;

    let mut rng = rng_for(spec.seed, &[stream::TEST]);
    let labels: Vec<usize> = (0..spec.test_samples)
        .map(|_| sample_label(global_prior.probs(), &mut rng))
        .collect();
    let test = spec.classes.sample_dataset(&labels, &mut rng);
    Ok(SynthData {
        shards,
        test,
        global_prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_class() -> GaussianClasses {
        GaussianClasses::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap()
    }

    #[test]
    fn degenerate_prior_yields_single_class_shard() {
        let spec = SynthSpec {
            classes: two_class(),
            client_priors: vec![
                LabelDist::new(vec![1.0, 0.0]).unwrap(),
                LabelDist::uniform(2),
            ],
            samples_per_client: 200,
            test_samples: 10,
            seed: 1,
        };
        let data = synth_label_shift(&spec).unwrap();
        assert!(data.shards[0].data.labels().iter().all(|&y| y == 0));
        assert!((data.global_prior.probs()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn class_dead_for_all_clients_is_rejected() {
        let spec = SynthSpec {
            classes: two_class(),
            client_priors: vec![LabelDist::new(vec![1.0, 0.0]).unwrap()],
            samples_per_client: 5,
            test_samples: 5,
            seed: 1,
        };
        assert!(matches!(synth_label_shift(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn coincident_means_are_rejected() {
        assert!(GaussianClasses::new(vec![vec![1.0], vec![1.0]], 1.0).is_err());
        assert!(GaussianClasses::new(vec![vec![1.0], vec![0.0]], 0.0).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SynthSpec {
            classes: two_class(),
            client_priors: vec![LabelDist::new(vec![0.9, 0.1]).unwrap(); 2],
            samples_per_client: 50,
            test_samples: 20,
            seed: 17,
        };
        assert_eq!(
            synth_label_shift(&spec).unwrap(),
            synth_label_shift(&spec).unwrap()
        );
    }

    #[test]
    fn posterior_respects_prior_and_symmetry() {
        let g = two_class();
        let p = g.posterior(&[0.0, 3.0], &[0.5, 0.5]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        let p = g.posterior(&[0.0, 0.0], &[0.9, 0.1]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        // log-odds at x = (1, 0): 2 * x1 / sigma^2 = 2
        let p = g.posterior(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((p[1] - 1.0 / (1.0 + math::exp(-2.0))).abs() < 1e-12);
    }
}
