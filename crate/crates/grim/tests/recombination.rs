//! Contract tests for the reduction engine against an independent
//! brute-force oracle, plus randomized invariants.

mod common;

use common::{feasible_supports, oracle_contains, random_system, rng};
use grim::recombination::{
    recombine_basic, recombine_tree, svd_kernel_basis, ReductionSystem, DEFAULT_TOLERANCE,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn oracle_confirms_small_supports() {
    let mut r = rng(2024);
    for case in 0..200 {
        let n = r.random_range(2..=8usize);
        let m = r.random_range(0..=3usize.min(n - 1));
        let system = random_system(&mut r, n, m);
        let feasible = feasible_supports(&system);
        assert!(
            !feasible.is_empty(),
            "case {case}: oracle found no feasible support"
        );
        for (label, sol) in [
            ("basic", recombine_basic(&system).unwrap()),
            ("tree", recombine_tree(&system).unwrap()),
        ] {
            assert!(
                oracle_contains(&feasible, &sol.support),
                "case {case} ({label}): support {:?} not among the {} oracle-feasible sets",
                sol.support,
                feasible.len()
            );
        }
    }
}

#[test]
fn tree_handles_wide_system() {
    let mut r = rng(77);
    let system = random_system(&mut r, 4096, 8);
    let sol = recombine_tree(&system).unwrap();
    assert!(sol.support.len() <= 9);
    let scale = 1.0 + (system.matrix() * system.weights()).amax();
    assert!(sol.residual_inf <= 1e-8 * scale, "residual {}", sol.residual_inf);
    assert!(sol.weights.iter().all(|&w| w >= 0.0));
}

#[test]
fn kernel_basis_annihilates_and_spans() {
    let mut r = rng(5150);
    for _ in 0..50 {
        let n = r.random_range(2..=40usize);
        let m = r.random_range(0..=6usize);
        let system = random_system(&mut r, n, m);
        let basis = svd_kernel_basis(&system).unwrap();
        for (i, v) in basis.iter().enumerate() {
            assert!((v.norm() - 1.0).abs() < 1e-10);
            assert!((system.matrix() * v).amax() < 1e-8);
            for w in basis.iter().skip(i + 1) {
                assert!(v.dot(w).abs() < 1e-10);
            }
        }
        // a numerical rank count: kernel + rank = n
        let svd = system.matrix().clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax)
            .count();
        assert_eq!(basis.len(), n - rank);
    }
}

fn arbitrary_system() -> impl Strategy<Value = ReductionSystem> {
    (2usize..24, 1usize..5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * m),
            prop::collection::vec(0.0f64..1.0, n),
        )
            .prop_map(move |(entries, weights)| {
                let mut matrix = DMatrix::zeros(m + 1, n);
                for i in 0..n {
                    matrix[(0, i)] = 1.0;
                    for r in 0..m {
                        matrix[(r + 1, i)] = entries[r * n + i];
                    }
                }
                ReductionSystem::new(matrix, weights, DEFAULT_TOLERANCE).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduction_invariants(system in arbitrary_system()) {
        let y = system.matrix() * system.weights();
        let scale = 1.0 + y.amax();
        let total: f64 = system.weights().sum();
        for sol in [recombine_basic(&system).unwrap(), recombine_tree(&system).unwrap()] {
            // non-negativity
            prop_assert!(sol.weights.iter().all(|&w| w >= 0.0));
            // support bound
            prop_assert!(sol.support.len() <= system.matrix().nrows());
            // system preservation
            prop_assert!((system.matrix() * &sol.weights - &y).amax() <= 1e-8 * scale);
            // mass preservation through the ones row
            prop_assert!((sol.weights.sum() - total).abs() <= 1e-10 * (1.0 + total));
            // weights vanish off the support
            for (i, &w) in sol.weights.iter().enumerate() {
                prop_assert!(sol.support.contains(&i) == (w > 0.0));
            }
        }
    }
}
