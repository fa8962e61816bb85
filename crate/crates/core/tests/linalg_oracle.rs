//! Cross-checks of the in-crate dense linear algebra against nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use fedshift_core::rng::rng_for;
use fedshift_core::theory::QuadInstance;
use fedshift_core::Matrix;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn random_spd(n: usize, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, &[1]);
    let b = Matrix::from_vec(
        n,
        n,
        (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut a = b.transpose().matmul(&b).unwrap();
    for i in 0..n {
        a[(i, i)] += 0.5;
    }
    a
}

#[test]
fn symmetric_eigenvalues_match_nalgebra() {
    for seed in 0..20 {
        let n = 2 + (seed as usize % 9);
        let a = random_spd(n, seed);
        let ours = a.symmetric_eigenvalues().unwrap();
        let mut theirs: Vec<f64> = to_na(&a)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!(
                (x - y).abs() <= 1e-10 * y.abs().max(1.0),
                "seed {seed}: {x} vs {y}"
            );
        }
    }
}

#[test]
fn spd_solve_matches_nalgebra_cholesky() {
    for seed in 0..20 {
        let n = 1 + (seed as usize % 10);
        let a = random_spd(n, seed + 100);
        let mut rng = rng_for(seed, &[2]);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ours = a.solve_spd(&b).unwrap();
        let theirs = to_na(&a).cholesky().unwrap().solve(&DVector::from_vec(b));
        for (x, y) in ours.iter().zip(theirs.iter()) {
            assert!(
                (x - y).abs() <= 1e-9 * y.abs().max(1.0),
                "seed {seed}: {x} vs {y}"
            );
        }
    }
}

#[test]
fn matmul_matches_nalgebra() {
    let mut rng = rng_for(3, &[3]);
    let a = Matrix::from_vec(4, 6, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let ours = a.matmul(&b).unwrap();
    let theirs = to_na(&a) * to_na(&b);
    for r in 0..4 {
        for c in 0..3 {
            assert!((ours[(r, c)] - theirs[(r, c)]).abs() < 1e-14);
        }
    }
}

/// The global optimum of averaged quadratics solves `(sum A_i) w = sum b_i`.
#[test]
fn quadratic_global_optimum_matches_nalgebra_solve() {
    let optima: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect())
        .collect();
    let inst = QuadInstance::with_optima(&optima, 0.5, 4.0, 11).unwrap();
    let mut a_sum = DMatrix::<f64>::zeros(5, 5);
    let mut b_sum = DVector::<f64>::zeros(5);
    for c in &inst.clients {
        a_sum += to_na(&c.a);
        b_sum += DVector::from_column_slice(&c.b);
    }
    let theirs = a_sum.lu().solve(&b_sum).unwrap();
    let ours = inst.quadratic_global_optimum().unwrap();
    for (x, y) in ours.iter().zip(theirs.iter()) {
        assert!((x - y).abs() < 1e-10);
    }
    let (lo, hi) = inst.curvature_range().unwrap();
    for c in &inst.clients {
        let eig = to_na(&c.a).symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= lo - 1e-10 && e <= hi + 1e-10));
    }
    assert!(lo >= 0.5 - 1e-9 && hi <= 4.0 + 1e-9);
}
