mod common;

use proptest::prelude::*;
use rand::Rng;

use fedshift_core::data::{
    compute_shift, dirichlet_partition, estimate_label_dist, secure_aggregate_dist, LabelDist,
    PartitionConfig,
};
use fedshift_core::nn::{self, shifted_softmax_ce, Architecture, Batch, LossConfig};
use fedshift_core::rng::rng_for;
use fedshift_core::server::aggregate;
use fedshift_core::{Matrix, ParamVector};

fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, &[1]);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_batch(n: usize, d: usize, k: usize, seed: u64) -> Batch {
    let mut rng = rng_for(seed, &[2]);
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    Batch::new(random_matrix(n, d, 2.0, seed), labels, k).unwrap()
}

fn random_dist(k: usize, seed: u64, tag: u64) -> LabelDist {
    let mut rng = rng_for(seed, &[3, tag]);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1e-3..1.0)).collect();
    let s: f64 = raw.iter().sum();
    LabelDist::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
}

fn loss_config(kind: u8, k: usize, seed: u64) -> LossConfig {
    let mut rng = rng_for(seed, &[4]);
    match kind {
        0 => LossConfig::default(),
        1 => LossConfig::shifted((0..k).map(|_| rng.random_range(-3.0..3.0)).collect()),
        _ => LossConfig::weighted((0..k).map(|_| rng.random_range(0.1..3.0)).collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_central_differences(
        hidden in prop::bool::ANY,
        d in 1usize..5,
        k in 2usize..5,
        n in 1usize..7,
        kind in 0u8..3,
        seed in any::<u64>(),
    ) {
        let hidden_dims = if hidden { vec![32] } else { vec![] };
        let arch = Architecture::new(d, hidden_dims, k).unwrap();
        let params = arch.init_params(seed);
        let batch = random_batch(n, d, k, seed);
        prop_assume!(common::kink_clearance(&arch, &params, &batch, common::FD_STEP) > 10.0);
        let cfg = loss_config(kind, k, seed);
        let err = common::max_relative_grad_error(&arch, &params, &batch, &cfg);
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn shift_is_the_same_as_offset_logits(
        n in 1usize..6, k in 2usize..6, seed in any::<u64>(),
    ) {
        let logits = random_matrix(n, k, 10.0, seed);
        let mut rng = rng_for(seed, &[5]);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let shift: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut offset = logits.clone();
        for r in 0..n {
            for (z, s) in offset.row_mut(r).iter_mut().zip(&shift) {
                *z += s;
            }
        }
        let (a, ga) = shifted_softmax_ce(&logits, &labels, &LossConfig::shifted(shift)).unwrap();
        let (b, gb) = shifted_softmax_ce(&offset, &labels, &LossConfig::default()).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(ga, gb);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn posterior_rows_are_distributions_with_logit_argmax(
        n in 1usize..8, d in 1usize..5, k in 2usize..6, seed in any::<u64>(),
    ) {
        let arch = Architecture::new(d, vec![6], k).unwrap();
        let params = arch.init_params(seed);
        let x = random_matrix(n, d, 3.0, seed);
        let logits = nn::forward(&params, &arch, &x).unwrap();
        let post = nn::predict_posterior(&params, &arch, &x).unwrap();
        for r in 0..n {
            let row = post.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert_eq!(nn::argmax(row), nn::argmax(logits.row(r)));
        }
    }

    #[test]
    fn shift_identities_hold(k in 2usize..12, seed in any::<u64>()) {
        let local = random_dist(k, seed, 0);
        let global = random_dist(k, seed, 1);
        let s = compute_shift(&local, &global).unwrap();
        let total: f64 = global.probs().iter().zip(s.values()).map(|(p, v)| p * v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for ((g, v), l) in global.probs().iter().zip(s.values()).zip(local.probs()) {
            prop_assert!((g * v.exp() - l).abs() < 1e-12);
        }
        prop_assert!(compute_shift(&local, &local).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothed_estimates_are_strictly_positive_distributions(
        labels in prop::collection::vec(0usize..6, 0..200),
    ) {
        let d = estimate_label_dist(&labels, 6).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.is_strictly_positive());
    }

    #[test]
    fn partition_is_complete_disjoint_and_seeded(
        labels in prop::collection::vec(0usize..5, 1..300),
        clients in 1usize..8,
        alpha in 0.05f64..100.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.len() >= clients);
        let cfg = PartitionConfig { num_clients: clients, alpha, seed };
        let parts = dirichlet_partition(&labels, &cfg).unwrap();
        prop_assert_eq!(parts.len(), clients);
        prop_assert!(parts.iter().all(|p| !p.is_empty()));
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert_eq!(parts, dirichlet_partition(&labels, &cfg).unwrap());
    }

    #[test]
    fn masked_aggregation_matches_plain_sum(
        clients in 1usize..12, k in 2usize..10, seed in any::<u64>(),
    ) {
        let dists: Vec<LabelDist> = (0..clients).map(|i| random_dist(k, seed, 10 + i as u64)).collect();
        let mut rng = rng_for(seed, &[6]);
        let raw: Vec<f64> = (0..clients).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
        let masked = secure_aggregate_dist(&dists, &weights, seed).unwrap();
        for c in 0..k {
            let plain: f64 = dists.iter().zip(&weights).map(|(d, w)| w * d.probs()[c]).sum();
            prop_assert!((masked.result.probs()[c] - plain).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregation_is_linear_in_the_deltas(
        clients in 1usize..6, p in 1usize..10, seed in any::<u64>(),
    ) {
        let mut rng = rng_for(seed, &[7]);
        let w_prev: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let updates: Vec<(usize, ParamVector)> = (0..clients)
            .map(|i| (i, ParamVector::from((0..p).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())))
            .collect();
        let weights: Vec<f64> = (0..clients).map(|_| rng.random_range(0.0..0.5)).collect();
        let out = aggregate(&w_prev, &updates, &weights, false).unwrap();
        let mut reversed = updates.clone();
        reversed.reverse();
        prop_assert_eq!(&out, &aggregate(&w_prev, &reversed, &weights, false).unwrap());
        for j in 0..p {
            let expect = w_prev[j] + updates.iter().map(|(i, u)| weights[*i] * (u[j] - w_prev[j])).sum::<f64>();
            prop_assert!((out[j] - expect).abs() < 1e-12);
        }
    }
}
