//! Packing and covering estimates for the selected-functional geometry, and
//! checks of the separation and step-bound corollaries on completed runs.
//!
//! In the single-extension, single-shuffle regime any two selected
//! functionals end up separated by at least `(ε − ε₀)/(2C)` in the dual
//! norm, so the selected set is a packing and the step count is bounded by
//! the packing number of the data set at that radius.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grim::GrimTrace;

/// Exhaustive packing search is attempted up to this many functionals.
pub const EXHAUSTIVE_CAP: usize = 20;

/// Symmetric matrix of dual-space distances between functionals.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    dist: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(dist: DMatrix<f64>) -> Result<Self> {
        if dist.nrows() != dist.ncols() {
            return Err(Error::Dimension("distance matrix must be square".into()));
        }
        for i in 0..dist.nrows() {
            if dist[(i, i)] != 0.0 {
                return Err(Error::Data(format!("diagonal entry {i} is {}, expected 0", dist[(i, i)])));
            }
            for j in 0..i {
                let (a, b) = (dist[(i, j)], dist[(j, i)]);
                if (a - b).abs() > 1e-12 {
                    return Err(Error::Data(format!("asymmetric entries at ({i}, {j}): {a} vs {b}")));
                }
                if a < 0.0 {
                    return Err(Error::Data(format!("negative distance {a} at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dist })
    }

    pub fn len(&self) -> usize {
        self.dist.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }
}

/// Greedy farthest-point packing: a lower bound on the `r`-packing number.
/// Every returned pair is strictly more than `r` apart.
pub fn greedy_packing_estimate(dist: &DistanceMatrix, r: f64) -> (usize, Vec<usize>) {
    let n = dist.len();
    if n == 0 {
        return (0, Vec::new());
    }
    let mut selected = vec![0usize];
    let mut min_dist: Vec<f64> = (0..n).map(|j| dist.get(0, j)).collect();
    loop {
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        for (j, &d) in min_dist.iter().enumerate() {
            if !selected.contains(&j) && d > best {
                best = d;
                arg = Some(j);
            }
        }
        match arg {
            Some(j) if best > r => {
                selected.push(j);
                for (z, d) in min_dist.iter_mut().enumerate() {
                    *d = d.min(dist.get(j, z));
                }
            }
            _ => break,
        }
    }
    (selected.len(), selected)
}

/// Greedy set cover by closed `r`-balls centered at data points: an upper
/// bound on the data-centered `r`-covering number.
pub fn greedy_covering_estimate(dist: &DistanceMatrix, r: f64) -> (usize, Vec<usize>) {
    let n = dist.len();
    let mut covered = vec![false; n];
    let mut centers = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let mut best_count = 0usize;
        let mut best_center = 0usize;
        for c in 0..n {
            let count = (0..n).filter(|&z| !covered[z] && dist.get(c, z) <= r).count();
            if count > best_count {
                best_count = count;
                best_center = c;
            }
        }
        centers.push(best_center);
        for (z, c) in covered.iter_mut().enumerate() {
            if !*c && dist.get(best_center, z) <= r {
                *c = true;
                remaining -= 1;
            }
        }
    }
    (centers.len(), centers)
}

/// Exact `r`-packing number by branch and bound over subsets. Only feasible
/// for small data sets; callers above [`EXHAUSTIVE_CAP`] should fall back to
/// the greedy estimate.
pub fn exhaustive_packing_number(dist: &DistanceMatrix, r: f64) -> Result<(usize, Vec<usize>)> {
    let n = dist.len();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::Config(format!(
            "exhaustive packing search capped at {EXHAUSTIVE_CAP} functionals, got {n}"
        )));
    }
    let mut best: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    fn recurse(
        dist: &DistanceMatrix,
        r: f64,
        start: usize,
        current: &mut Vec<usize>,
        best: &mut Vec<usize>,
    ) {
        let n = dist.len();
        if current.len() + (n - start) <= best.len() {
            return;
        }
        if current.len() > best.len() {
            *best = current.clone();
        }
        for cand in start..n {
            if current.iter().all(|&s| dist.get(s, cand) > r) {
                current.push(cand);
                recurse(dist, r, cand + 1, current, best);
                current.pop();
            }
        }
    }
    recurse(dist, r, 0, &mut current, &mut best);
    if best.is_empty() && n > 0 {
        best.push(0);
    }
    Ok((best.len(), best))
}

/// Exact data-centered `r`-covering number by subset enumeration.
pub fn exhaustive_covering_number(dist: &DistanceMatrix, r: f64) -> Result<usize> {
    let n = dist.len();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::Config(format!(
            "exhaustive covering search capped at {EXHAUSTIVE_CAP} functionals, got {n}"
        )));
    }
    if n == 0 {
        return Ok(0);
    }
    let balls: Vec<u64> = (0..n)
        .map(|c| {
            let mut mask = 0u64;
            for z in 0..n {
                if dist.get(c, z) <= r {
                    mask |= 1 << z;
                }
            }
            mask
        })
        .collect();
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    for k in 1..=n {
        if cover_exists(&balls, full, 0, k, 0) {
            return Ok(k);
        }
    }
    Ok(n)
}

fn cover_exists(balls: &[u64], full: u64, covered: u64, k: usize, start: usize) -> bool {
    if covered == full {
        return true;
    }
    if k == 0 || start >= balls.len() {
        return false;
    }
    for c in start..balls.len() {
        if balls.len() - c < k {
            break;
        }
        if cover_exists(balls, full, covered | balls[c], k - 1, c + 1) {
            return true;
        }
    }
    false
}

/// Outcome of the pairwise separation check on a completed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparationReport {
    /// The check applies only to runs with `k ≡ 1` and `s ≡ 1`.
    pub applicable: bool,
    pub reason: Option<String>,
    /// `(ε − ε₀)/(2C)`.
    pub threshold: f64,
    pub pairs_checked: usize,
    /// Pairs of selected functionals closer than the threshold.
    pub violations: Vec<(usize, usize, f64)>,
    pub passed: bool,
}

fn single_step_schedule(trace: &GrimTrace) -> bool {
    trace
        .steps
        .iter()
        .all(|s| s.new_indices.len() == 1 && s.shuffles_run == 1)
}

/// Verifies that every pair of selected functionals is at least
/// `(ε − ε₀)/(2C)` apart in the supplied dual distance. A violation points
/// at an implementation bug, not at a failure of the theory.
pub fn separation_check(
    trace: &GrimTrace,
    dist: &DistanceMatrix,
    epsilon: f64,
    epsilon0: f64,
    mass: f64,
) -> SeparationReport {
    let threshold = (epsilon - epsilon0) / (2.0 * mass);
    if !single_step_schedule(trace) {
        return SeparationReport {
            applicable: false,
            reason: Some("separation holds only for runs with k ≡ 1 and s ≡ 1".into()),
            threshold,
            pairs_checked: 0,
            violations: Vec::new(),
            passed: true,
        };
    }
    let selected = trace.selected_upto(trace.steps.len());
    let mut violations = Vec::new();
    let mut pairs = 0usize;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            pairs += 1;
            let d = dist.get(i, j);
            if d < threshold * (1.0 - 1e-12) {
                violations.push((i, j, d));
            }
        }
    }
    SeparationReport {
        applicable: true,
        reason: None,
        threshold,
        pairs_checked: pairs,
        passed: violations.is_empty(),
        violations,
    }
}

/// Step-count bounds for a completed run: the hard cap `min(N−1, Λ)` and
/// the packing number of the data set at radius `(ε − ε₀)/(2C)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepBoundReport {
    pub steps_completed: usize,
    pub hard_cap: usize,
    pub within_hard_cap: bool,
    pub packing_radius: f64,
    /// Exact when `Λ ≤ 20` (`packing_exact`), otherwise the greedy
    /// lower-bound estimate.
    pub packing_bound: usize,
    pub packing_exact: bool,
    /// Meaningful only when the exhaustive value is available and the run
    /// used `k ≡ 1`, `s ≡ 1`.
    pub within_packing_bound: Option<bool>,
    pub applicable: bool,
}

pub fn step_bound_report(
    trace: &GrimTrace,
    dist: &DistanceMatrix,
    epsilon: f64,
    epsilon0: f64,
    mass: f64,
    n_features: usize,
    n_functionals: usize,
) -> StepBoundReport {
    let steps_completed = trace.steps.len();
    let hard_cap = n_features.saturating_sub(1).min(n_functionals);
    let radius = (epsilon - epsilon0) / (2.0 * mass);
    let applicable = single_step_schedule(trace);
    let (packing_bound, packing_exact) = if dist.len() <= EXHAUSTIVE_CAP {
        let (count, _) = exhaustive_packing_number(dist, radius).expect("within cap");
        (count, true)
    } else {
        let (count, _) = greedy_packing_estimate(dist, radius);
        (count, false)
    };
    let within_packing_bound =
        (packing_exact && applicable).then_some(steps_completed <= packing_bound);
    StepBoundReport {
        steps_completed,
        hard_cap,
        within_hard_cap: steps_completed <= hard_cap,
        packing_radius: radius,
        packing_bound,
        packing_exact,
        within_packing_bound,
        applicable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_distances(points: &[f64]) -> DistanceMatrix {
        let n = points.len();
        let m = DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).abs());
        DistanceMatrix::new(m).unwrap()
    }

    #[test]
    fn packing_collapses_when_everything_is_close() {
        let dm = line_distances(&[0.0, 0.1, 0.2]);
        let (count, sel) = greedy_packing_estimate(&dm, 0.5);
        assert_eq!(count, 1);
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn packing_pair_beyond_radius() {
        let dm = line_distances(&[0.0, 2.0]);
        let (count, _) = greedy_packing_estimate(&dm, 1.0);
        assert_eq!(count, 2);
    }

    #[test]
    fn packing_on_four_line_points() {
        let dm = line_distances(&[0.0, 1.0, 2.0, 3.0]);
        let (count, sel) = greedy_packing_estimate(&dm, 1.5);
        assert_eq!(count, 2);
        for (a, &i) in sel.iter().enumerate() {
            for &j in &sel[a + 1..] {
                assert!(dm.get(i, j) > 1.5);
            }
        }
        let (exact, _) = exhaustive_packing_number(&dm, 1.5).unwrap();
        assert_eq!(exact, 2);
    }

    #[test]
    fn covering_small_cases() {
        let dm = line_distances(&[0.0]);
        assert_eq!(greedy_covering_estimate(&dm, 1.0).0, 1);
        let dm = line_distances(&[0.0, 3.0]);
        assert_eq!(greedy_covering_estimate(&dm, 1.0).0, 2);
        let dm = line_distances(&[0.0, 1.0, 2.0, 3.0]);
        let (count, centers) = greedy_covering_estimate(&dm, 1.0);
        assert_eq!(count, 2);
        // every point is within r of some center
        for z in 0..4 {
            assert!(centers.iter().any(|&c| dm.get(c, z) <= 1.0));
        }
        assert_eq!(exhaustive_covering_number(&dm, 1.0).unwrap(), 2);
    }

    #[test]
    fn greedy_packing_never_exceeds_exact() {
        let pts = [0.0, 0.4, 1.1, 1.5, 2.0, 3.1, 4.0];
        let dm = line_distances(&pts);
        for r in [0.3, 0.5, 1.0, 1.6] {
            let (greedy, _) = greedy_packing_estimate(&dm, r);
            let (exact, _) = exhaustive_packing_number(&dm, r).unwrap();
            assert!(greedy <= exact, "r = {r}: greedy {greedy} > exact {exact}");
        }
    }

    #[test]
    fn packing_covering_chain() {
        let pts = [0.0, 0.7, 1.3, 2.2, 2.9, 4.1];
        let dm = line_distances(&pts);
        for r in [0.4, 0.8, 1.5] {
            let (pack_2r, _) = exhaustive_packing_number(&dm, 2.0 * r).unwrap();
            let cov_r = exhaustive_covering_number(&dm, r).unwrap();
            let (pack_r, _) = exhaustive_packing_number(&dm, r).unwrap();
            assert!(pack_2r <= cov_r, "r = {r}");
            assert!(cov_r <= pack_r, "r = {r}");
        }
    }

    #[test]
    fn separation_check_is_vacuous_for_single_step() {
        use crate::grim::StepRecord;
        let trace = GrimTrace {
            steps: vec![StepRecord {
                step: 1,
                new_indices: vec![2],
                shuffle_winner: 0,
                shuffles_run: 1,
                residual_sup: 0.1,
                support_size: 2,
                indices: vec![0, 1],
                coefficients: vec![0.5, 0.5],
            }],
            best_step: 1,
        };
        let dm = line_distances(&[0.0, 1.0, 2.0]);
        let report = separation_check(&trace, &dm, 0.5, 0.0, 1.0);
        assert!(report.applicable);
        assert!(report.passed);
        assert_eq!(report.pairs_checked, 0);
    }

    #[test]
    fn separation_check_guards_schedule() {
        use crate::grim::StepRecord;
        let trace = GrimTrace {
            steps: vec![StepRecord {
                step: 1,
                new_indices: vec![0, 1, 2, 3],
                shuffle_winner: 0,
                shuffles_run: 1,
                residual_sup: 0.1,
                support_size: 2,
                indices: vec![0],
                coefficients: vec![1.0],
            }],
            best_step: 1,
        };
        let dm = line_distances(&[0.0, 1.0, 2.0, 3.0]);
        let report = separation_check(&trace, &dm, 0.5, 0.0, 1.0);
        assert!(!report.applicable);
    }
}
