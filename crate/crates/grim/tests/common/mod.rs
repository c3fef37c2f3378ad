//! Shared generators and independent oracles for the integration suites.

#![allow(dead_code)]

use grim::recombination::{ReductionSystem, DEFAULT_TOLERANCE};
use grim::{PointCloud, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Random reduction system: entries uniform in [−1, 1] under the ones row,
/// non-negative weights with a sprinkling of exact zeros.
pub fn random_system(rng: &mut ChaCha12Rng, n: usize, m: usize) -> ReductionSystem {
    let mut matrix = DMatrix::zeros(m + 1, n);
    for i in 0..n {
        matrix[(0, i)] = 1.0;
        for r in 1..=m {
            matrix[(r, i)] = rng.random_range(-1.0..1.0);
        }
    }
    let weights: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_range(0.0..1.0) < 0.1 {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect();
    ReductionSystem::new(matrix, weights, DEFAULT_TOLERANCE).unwrap()
}

/// Random problem instance with entries in [−1, 1]. Weights are non-zero;
/// all positive when `all_positive` is set. Norms lie in [0.5, 2].
pub fn random_instance(
    rng: &mut ChaCha12Rng,
    lambda: usize,
    n: usize,
    all_positive: bool,
) -> ProblemInstance {
    let evaluations = DMatrix::from_fn(lambda, n, |_, _| rng.random_range(-1.0..1.0));
    let weights = DVector::from_fn(n, |_, _| {
        let magnitude = rng.random_range(0.1..1.0);
        if all_positive || rng.random_range(0.0..1.0) < 0.5 {
            magnitude
        } else {
            -magnitude
        }
    });
    let norms = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    ProblemInstance::new(evaluations, weights, Some(norms)).unwrap()
}

/// Gaussian mixture cloud in `R^d` with unit-variance components.
pub fn gaussian_mixture_cloud(
    rng: &mut ChaCha12Rng,
    n: usize,
    d: usize,
    centers: &[Vec<f64>],
) -> PointCloud {
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            (0..d).map(|t| c[t] + gauss(rng)).collect()
        })
        .collect();
    PointCloud::new(points).unwrap()
}

/// Standard normal via Box–Muller.
pub fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Brute-force oracle for small systems: every support subset of size at
/// most `rows` that admits a non-negative solution reproducing `A·x`,
/// found by solving each subsystem with an SVD least-squares path that is
/// independent of the elimination code.
pub fn feasible_supports(system: &ReductionSystem) -> Vec<Vec<usize>> {
    let a = system.matrix();
    let y = a * system.weights();
    let n = a.ncols();
    let cap = a.nrows();
    let mut feasible = Vec::new();
    for mask in 0u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if support.len() > cap {
            continue;
        }
        if support.is_empty() {
            if y.amax() < 1e-9 {
                feasible.push(support);
            }
            continue;
        }
        let sub = DMatrix::from_fn(a.nrows(), support.len(), |r, c| a[(r, support[c])]);
        let svd = sub.clone().svd(true, true);
        if let Ok(b) = svd.solve(&y, 1e-12) {
            let residual = (&sub * &b - &y).amax();
            let min_b = b.iter().cloned().fold(f64::INFINITY, f64::min);
            if residual < 1e-8 * (1.0 + y.amax()) && min_b > -1e-9 {
                feasible.push(support);
            }
        }
    }
    feasible
}

/// Checks a support against the oracle list, ignoring order.
pub fn oracle_contains(feasible: &[Vec<usize>], support: &[usize]) -> bool {
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    feasible.iter().any(|f| f == &sorted)
}
