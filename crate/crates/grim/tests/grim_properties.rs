//! Randomized invariants of the greedy loop and the interpolation baseline.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use common::{random_instance, rng};
use grim::geim::{geim_fit, geim_interpolate, SampledNorm};
use grim::grim::{grouped_extension_step, normalize_instance, run_grim, GrimConfig};
use grim::ProblemInstance;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn check_run_invariants(instance: &ProblemInstance, config: &GrimConfig, all_positive: bool) {
    let norm = normalize_instance(instance).unwrap();
    let epsilon0 = config.epsilon0_or_default(norm.mass);
    let result = run_grim(instance, config).unwrap();

    // nesting: strict growth by exactly k_t per step, no repeats
    let mut seen = HashSet::new();
    for (t, step) in result.trace.steps.iter().enumerate() {
        if !config.grouped {
            assert_eq!(step.new_indices.len(), config.k_schedule[t]);
        }
        for &j in &step.new_indices {
            assert!(seen.insert(j), "functional {j} selected twice");
        }
        // support bound: 1 + κ_t
        let kappa: usize = result.trace.steps[..=t]
            .iter()
            .map(|s| s.new_indices.len())
            .sum();
        assert!(step.support_size <= 1 + kappa);
        // per-step interpolation on the selected functionals
        let selected = result.trace.selected_upto(t + 1);
        // map the recorded feature-basis candidate back to the h basis
        let mut residual = norm.target.clone();
        for (&i, &c) in step.indices.iter().zip(&step.coefficients) {
            let b = c.abs() * instance.feature_norms[i];
            for j in 0..residual.len() {
                residual[j] -= b * norm.h_evaluations[(j, i)];
            }
        }
        for &j in &selected {
            assert!(
                residual[j].abs() <= epsilon0 + 1e-9 * norm.mass,
                "step {}: selected functional {j} residual {}",
                t + 1,
                residual[j]
            );
        }
    }

    // mass preservation
    let mass = result.coefficient_mass(&instance.feature_norms);
    assert!(
        (mass - norm.mass).abs() <= 1e-8 * norm.mass,
        "mass {mass} vs {}",
        norm.mass
    );

    // convexity preservation
    if all_positive {
        assert!(result.coefficients.iter().all(|&c| c >= 0.0));
    }

    // hard step cap under unit extension
    if config.k_schedule.iter().all(|&k| k == 1) {
        let cap = instance
            .n_features()
            .saturating_sub(1)
            .min(instance.n_functionals());
        assert!(result.steps_completed <= cap);
    }

    // determinism
    let again = run_grim(instance, config).unwrap();
    assert_eq!(
        serde_json::to_string(&result).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn randomized_run_invariants() {
    let mut r = rng(90210);
    for case in 0..40 {
        let lambda = r.random_range(6..=24usize);
        let n = r.random_range(8..=32usize);
        let all_positive = case % 2 == 0;
        let instance = random_instance(&mut r, lambda, n, all_positive);
        let cap = (n - 1).min(lambda);
        let max_steps = r.random_range(2..=4usize.min(cap));
        let k = r.random_range(1..=2usize.min(cap / max_steps).max(1));
        let s = r.random_range(1..=3usize);
        let config = GrimConfig {
            epsilon: 0.05,
            epsilon0: None,
            max_steps,
            k_schedule: vec![k; max_steps],
            s_schedule: vec![s; max_steps],
            seed: case as u64,
            grouped: false,
        };
        check_run_invariants(&instance, &config, all_positive);
    }
}

#[test]
fn unit_schedule_runs_to_the_cap() {
    let mut r = rng(1234);
    let instance = random_instance(&mut r, 6, 5, true);
    let cap = 4; // min(N - 1, Λ) for this instance
    let config = GrimConfig::uniform(1e-14, cap, 1, 1, 9);
    check_run_invariants(&instance, &config, true);
}

/// The grouped step must agree with ranking points by their worst
/// per-coordinate residual.
#[test]
fn grouped_extension_matches_pointwise_argmax() {
    let mut r = rng(4242);
    for _ in 0..50 {
        let n_groups = r.random_range(2..=6usize);
        let rows_per_group = r.random_range(1..=4usize);
        let lambda = n_groups * rows_per_group;
        let group_of: Vec<usize> = (0..lambda).map(|row| row / rows_per_group).collect();
        let residual = DVector::from_fn(lambda, |_, _| r.random_range(-1.0..1.0));
        let m = r.random_range(1..=n_groups);

        let rows = grouped_extension_step(&residual, &group_of, &HashSet::new(), m).unwrap();

        // independent ranking over group maxima
        let mut maxima: Vec<(usize, f64)> = (0..n_groups)
            .map(|g| {
                let best = (0..lambda)
                    .filter(|&row| group_of[row] == g)
                    .map(|row| residual[row].abs())
                    .fold(f64::NEG_INFINITY, f64::max);
                (g, best)
            })
            .collect();
        maxima.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut expected: Vec<usize> = Vec::new();
        for &(g, _) in maxima.iter().take(m) {
            expected.extend((0..lambda).filter(|&row| group_of[row] == g));
        }
        assert_eq!(rows, expected);
    }
}

#[test]
fn grouped_run_selects_whole_groups() {
    let mut r = rng(31337);
    let lambda = 12;
    let n = 20;
    let instance = random_instance(&mut r, lambda, n, true)
        .with_groups((0..lambda).map(|row| row / 3).collect())
        .unwrap();
    let config = GrimConfig {
        epsilon: 1e-9,
        epsilon0: None,
        max_steps: 2,
        k_schedule: vec![1, 1],
        s_schedule: vec![2, 2],
        seed: 5,
        grouped: true,
    };
    let result = run_grim(&instance, &config).unwrap();
    for step in &result.trace.steps {
        assert_eq!(step.new_indices.len(), 3);
        let g = instance.group_of.as_ref().unwrap()[step.new_indices[0]];
        for &row in &step.new_indices {
            assert_eq!(instance.group_of.as_ref().unwrap()[row], g);
        }
    }
}

#[test]
fn geim_interpolation_exact_on_random_vectors() {
    let mut r = rng(808);
    let lambda = 12;
    let n = 15;
    let evals = DMatrix::from_fn(lambda, n, |_, _| r.random_range(-1.0..1.0));
    let instance =
        ProblemInstance::new(evals.clone(), DVector::from_element(n, 1.0), None).unwrap();
    let oracle = SampledNorm::new(
        DMatrix::from_fn(lambda, n, |i, j| evals[(i, j)]),
        DVector::from_element(lambda, 1.0 / lambda as f64),
    )
    .unwrap();
    let fit = geim_fit(&instance, &oracle, 6, 0.0).unwrap();
    for _ in 0..100 {
        let w = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let j = geim_interpolate(&fit.state, &w).unwrap();
        let diff = &instance.evaluations * (&w - &j);
        for &f in &fit.state.selected_functionals {
            assert!(diff[f].abs() < 1e-8, "functional {f}: {}", diff[f]);
        }
    }
}

/// Wall time across a widening grid should track the analytic cost model;
/// generous slack keeps the check meaningful without turning it flaky.
#[test]
fn run_time_tracks_cost_model() {
    let mut r = rng(60601);
    // (N, Λ) grid with sharply increasing model cost
    let grid = [(64usize, 32usize), (256, 128), (1024, 512)];
    let mut times = Vec::new();
    let mut models = Vec::new();
    for &(n, lambda) in &grid {
        let instance = random_instance(&mut r, lambda, n, true);
        let steps = 6usize;
        let config = GrimConfig::uniform(1e-14, steps, 1, 1, 3);
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t0 = Instant::now();
            let _ = run_grim(&instance, &config).unwrap();
            best = best.min(t0.elapsed().as_secs_f64());
        }
        times.push(best);
        let kappa_terms: f64 = (1..=steps)
            .map(|t| {
                let kappa = t as f64;
                kappa * (n + lambda) as f64 + kappa.powi(3) * ((n as f64 / kappa).ln())
            })
            .sum();
        models.push(n as f64 * lambda as f64 + kappa_terms);
    }
    for i in 1..grid.len() {
        assert!(
            times[i] >= times[i - 1] * 0.5,
            "time collapsed between grid points: {times:?}"
        );
        let time_ratio = times[i] / times[i - 1];
        let model_ratio = models[i] / models[i - 1];
        assert!(
            time_ratio < model_ratio * 25.0,
            "time ratio {time_ratio:.2} far above model ratio {model_ratio:.2}"
        );
    }
}
