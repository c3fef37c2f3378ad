//! The greedy recombination interpolation loop.
//!
//! Each step extends the set of matched functionals by the worst residuals,
//! then rebuilds a short expansion by recombination over a number of shuffled
//! row orders, keeping the candidate with the smallest sup-residual over the
//! whole data set. The loop stops once every functional is matched within the
//! target accuracy or the step budget is exhausted.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recombination::recombination_thin;

/// Relative slack granted on top of `ε₀` when checking that a recombined
/// candidate matches the selected functionals.
const INTERPOLATION_SLACK: f64 = 1e-9;

/// A finite-dimensional encoding of the approximation problem: the
/// evaluation matrix `Φ[j][i] = σⱼ(fᵢ)`, the expansion weights `a`, and the
/// feature norms `ν`.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub evaluations: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub feature_norms: DVector<f64>,
    pub target: DVector<f64>,
    /// Optional map from functional row to group id, for grouped extension.
    pub group_of: Option<Vec<usize>>,
    /// Optional `Λ×Λ` matrix of dual-space distances between functionals.
    pub dual_distance: Option<DMatrix<f64>>,
}

impl ProblemInstance {
    /// Builds an instance, computing the target `Φ·a`. Feature norms default
    /// to one when not supplied (the total-variation norm of a point mass).
    pub fn new(
        evaluations: DMatrix<f64>,
        weights: DVector<f64>,
        feature_norms: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = evaluations.ncols();
        if n == 0 || evaluations.nrows() == 0 {
            return Err(Error::Dimension("evaluation matrix must be non-empty".into()));
        }
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {n} features",
                weights.len()
            )));
        }
        let feature_norms = feature_norms.unwrap_or_else(|| DVector::from_element(n, 1.0));
        if feature_norms.len() != n {
            return Err(Error::Dimension(format!(
                "{} feature norms for {n} features",
                feature_norms.len()
            )));
        }
        if evaluations.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("evaluation matrix has non-finite entries".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w == 0.0) {
            return Err(Error::Data("feature weights must be finite and non-zero".into()));
        }
        if feature_norms.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Data("feature norms must be positive and finite".into()));
        }
        let target = &evaluations * &weights;
        Ok(Self {
            evaluations,
            weights,
            feature_norms,
            target,
            group_of: None,
            dual_distance: None,
        })
    }

    pub fn with_groups(mut self, group_of: Vec<usize>) -> Result<Self> {
        if group_of.len() != self.evaluations.nrows() {
            return Err(Error::Dimension(format!(
                "{} group labels for {} functionals",
                group_of.len(),
                self.evaluations.nrows()
            )));
        }
        self.group_of = Some(group_of);
        Ok(self)
    }

    pub fn with_dual_distance(mut self, dist: DMatrix<f64>) -> Result<Self> {
        let rows = self.evaluations.nrows();
        if dist.nrows() != rows || dist.ncols() != rows {
            return Err(Error::Dimension(format!(
                "dual distance matrix is {}×{}, expected {rows}×{rows}",
                dist.nrows(),
                dist.ncols()
            )));
        }
        for i in 0..rows {
            if dist[(i, i)] != 0.0 {
                return Err(Error::Data("dual distance matrix must have zero diagonal".into()));
            }
            for j in 0..rows {
                if (dist[(i, j)] - dist[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Data("dual distance matrix must be symmetric".into()));
                }
            }
        }
        self.dual_distance = Some(dist);
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.evaluations.ncols()
    }

    pub fn n_functionals(&self) -> usize {
        self.evaluations.nrows()
    }
}

/// The instance after sign folding and unit-norm rescaling: column `i` of
/// `h_evaluations` is `sign(aᵢ)·Φ[:,i]/νᵢ`, the weights are `αᵢ = |aᵢ|·νᵢ`,
/// and `mass = Σαᵢ` is the quantity preserved by every reduction.
#[derive(Clone, Debug)]
pub struct NormalizedInstance {
    pub h_evaluations: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub mass: f64,
    pub sign_flips: Vec<bool>,
    pub target: DVector<f64>,
}

pub fn normalize_instance(instance: &ProblemInstance) -> Result<NormalizedInstance> {
    let n = instance.n_features();
    let mut h = instance.evaluations.clone();
    let mut alpha = DVector::zeros(n);
    let mut sign_flips = vec![false; n];
    for i in 0..n {
        let a = instance.weights[i];
        let nu = instance.feature_norms[i];
        if a == 0.0 {
            return Err(Error::Data(format!("feature {i} has zero weight")));
        }
        if !(nu > 0.0) {
            return Err(Error::Data(format!("feature {i} has non-positive norm {nu}")));
        }
        let scale = a.signum() / nu;
        for j in 0..h.nrows() {
            h[(j, i)] *= scale;
        }
        alpha[i] = a.abs() * nu;
        sign_flips[i] = a < 0.0;
    }
    let mass = alpha.sum();
    Ok(NormalizedInstance {
        h_evaluations: h,
        alpha,
        mass,
        sign_flips,
        target: instance.target.clone(),
    })
}

/// Run parameters for the greedy loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrimConfig {
    /// Target accuracy `ε` over the whole data set.
    pub epsilon: f64,
    /// Acceptable per-functional recombination error `ε₀ ∈ [0, ε)`.
    /// Defaults to `1e-10·C` when absent.
    pub epsilon0: Option<f64>,
    /// Maximum number of greedy steps `M`.
    pub max_steps: usize,
    /// Functionals (or groups, in grouped mode) added per step; length `M`.
    pub k_schedule: Vec<usize>,
    /// Shuffled recombination trials per step; length `M`.
    pub s_schedule: Vec<usize>,
    pub seed: u64,
    /// Extend by whole groups of functionals instead of single rows.
    pub grouped: bool,
}

impl GrimConfig {
    /// Scalar schedules broadcast over all `max_steps` steps.
    pub fn uniform(epsilon: f64, max_steps: usize, k: usize, s: usize, seed: u64) -> Self {
        Self {
            epsilon,
            epsilon0: None,
            max_steps,
            k_schedule: vec![k; max_steps],
            s_schedule: vec![s; max_steps],
            seed,
            grouped: false,
        }
    }

    /// The default recombination error is `1e-10·C`, capped at `ε/2` so the
    /// pair stays admissible for very tight targets.
    pub fn epsilon0_or_default(&self, mass: f64) -> f64 {
        self.epsilon0.unwrap_or((1e-10 * mass).min(self.epsilon / 2.0))
    }

    pub fn validate(&self, instance: &ProblemInstance) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(e0) = self.epsilon0 {
            if !(e0 >= 0.0) || e0 >= self.epsilon {
                return Err(Error::Config(format!(
                    "epsilon0 must satisfy 0 ≤ ε₀ < ε, got ε₀ = {e0}, ε = {}",
                    self.epsilon
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.k_schedule.len() != self.max_steps || self.s_schedule.len() != self.max_steps {
            return Err(Error::Config(format!(
                "schedules must have length max_steps = {}; got k: {}, s: {}",
                self.max_steps,
                self.k_schedule.len(),
                self.s_schedule.len()
            )));
        }
        if self.k_schedule.contains(&0) || self.s_schedule.contains(&0) {
            return Err(Error::Config("schedule entries must be positive".into()));
        }
        let n = instance.n_features();
        let lambda = instance.n_functionals();
        let cap = (n.saturating_sub(1)).min(lambda);
        let kappa: usize = self.k_schedule.iter().sum();
        if self.grouped {
            let group_of = instance
                .group_of
                .as_ref()
                .ok_or_else(|| Error::Config("grouped extension requires a grouping map".into()))?;
            let n_groups = group_of.iter().max().map_or(0, |&g| g + 1);
            if kappa > n_groups {
                return Err(Error::Config(format!(
                    "total groups requested {kappa} exceeds group count {n_groups}"
                )));
            }
            // Worst case rows: the κ largest groups must stay within the cap.
            let mut sizes = vec![0usize; n_groups];
            for &g in group_of {
                sizes[g] += 1;
            }
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            let worst: usize = sizes.iter().take(kappa).sum();
            if worst > cap {
                return Err(Error::Config(format!(
                    "grouped schedule may select {worst} functionals, exceeding min(N−1, Λ) = {cap}"
                )));
            }
        } else if kappa > cap {
            return Err(Error::Config(format!(
                "schedule total κ = {kappa} exceeds min(N−1, Λ) = {cap}"
            )));
        }
        Ok(())
    }
}

/// Picks the `m` unselected functionals with the largest absolute residual,
/// in decreasing order; ties break to the lowest index.
pub fn extension_step(
    residual: &DVector<f64>,
    already_selected: &[usize],
    m: usize,
) -> Result<Vec<usize>> {
    let taken: HashSet<usize> = already_selected.iter().copied().collect();
    let mut candidates: Vec<(usize, f64)> = (0..residual.len())
        .filter(|j| !taken.contains(j))
        .map(|j| (j, residual[j].abs()))
        .collect();
    if candidates.len() < m {
        return Err(Error::Config(format!(
            "requested {m} new functionals, only {} remain",
            candidates.len()
        )));
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(candidates.into_iter().take(m).map(|(j, _)| j).collect())
}

/// Grouped variant: picks `m_groups` unselected groups by descending maximum
/// absolute residual over each group's rows, and returns all of their rows.
pub fn grouped_extension_step(
    residual: &DVector<f64>,
    group_of: &[usize],
    already_selected_groups: &HashSet<usize>,
    m_groups: usize,
) -> Result<Vec<usize>> {
    if group_of.len() != residual.len() {
        return Err(Error::Dimension(format!(
            "{} group labels for {} residual entries",
            group_of.len(),
            residual.len()
        )));
    }
    let n_groups = group_of.iter().max().map_or(0, |&g| g + 1);
    let mut group_max = vec![f64::NEG_INFINITY; n_groups];
    for (row, &g) in group_of.iter().enumerate() {
        group_max[g] = group_max[g].max(residual[row].abs());
    }
    let mut candidates: Vec<(usize, f64)> = (0..n_groups)
        .filter(|g| !already_selected_groups.contains(g) && group_max[*g] > f64::NEG_INFINITY)
        .map(|g| (g, group_max[g]))
        .collect();
    if candidates.len() < m_groups {
        return Err(Error::Config(format!(
            "requested {m_groups} new groups, only {} remain",
            candidates.len()
        )));
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut rows = Vec::new();
    for (g, _) in candidates.into_iter().take(m_groups) {
        rows.extend((0..group_of.len()).filter(|&row| group_of[row] == g));
    }
    Ok(rows)
}

/// One recombination candidate: a short expansion in the normalized basis
/// together with its sup-residual over the whole data set.
#[derive(Clone, Debug)]
pub struct StepCandidate {
    /// Non-negative coefficients over `indices`, in the normalized `h` basis.
    pub coefficients: Vec<f64>,
    pub indices: Vec<usize>,
    /// `max_σ |σ(φ − u)|` over all functionals.
    pub e_value: f64,
    /// Index of the winning shuffle trial (0 is the identity ordering).
    pub trial: usize,
    pub residual: DVector<f64>,
}

/// Residual `σⱼ(φ − u)` for a candidate expansion in the normalized basis.
pub fn residual_vector(
    norm: &NormalizedInstance,
    coefficients: &[f64],
    indices: &[usize],
) -> Result<DVector<f64>> {
    if coefficients.len() != indices.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} indices",
            coefficients.len(),
            indices.len()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= norm.h_evaluations.ncols()) {
        return Err(Error::Dimension(format!("feature index {i} out of range")));
    }
    let mut r = norm.target.clone();
    for (&i, &c) in indices.iter().zip(coefficients) {
        for j in 0..r.len() {
            r[j] -= c * norm.h_evaluations[(j, i)];
        }
    }
    Ok(r)
}

/// Runs `s` recombination trials over shuffled orderings of the selected
/// rows and returns the candidate minimizing the sup-residual over all of
/// `Σ`; ties keep the earliest trial. Trial 0 uses the identity ordering,
/// later trials use permutations drawn from a stream derived from
/// `(seed, step, trial)`, so the trials are independent and run in
/// parallel without affecting the winner.
pub fn recombination_step(
    norm: &NormalizedInstance,
    selected: &[usize],
    s: usize,
    seed: u64,
    step: usize,
) -> Result<StepCandidate> {
    if s == 0 {
        return Err(Error::Config("shuffle number must be at least 1".into()));
    }
    let alpha: Vec<f64> = norm.alpha.iter().copied().collect();
    let candidates: Vec<StepCandidate> = (0..s)
        .into_par_iter()
        .map(|trial| {
            let mut order = selected.to_vec();
            if trial > 0 {
                let mut rng =
                    ChaCha12Rng::seed_from_u64(stream_seed(seed, step as u64, trial as u64));
                order.shuffle(&mut rng);
            }
            let thin = recombination_thin(&norm.h_evaluations, &alpha, &order)?;
            let residual = residual_vector(norm, &thin.coefficients, &thin.indices)?;
            let e_value = residual.amax();
            Ok(StepCandidate {
                coefficients: thin.coefficients,
                indices: thin.indices,
                e_value,
                trial,
                residual,
            })
        })
        .collect::<Result<_>>()?;
    let mut best: Option<StepCandidate> = None;
    for cand in candidates {
        if best.as_ref().is_none_or(|b| cand.e_value < b.e_value) {
            best = Some(cand);
        }
    }
    Ok(best.expect("s >= 1"))
}

/// Derives an independent RNG stream for one shuffle trial, so results do
/// not depend on execution order.
fn stream_seed(seed: u64, step: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(seed.wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))) ^ trial)
}

/// Audit record of one completed greedy step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    /// Functional rows added at this step.
    pub new_indices: Vec<usize>,
    /// Winning shuffle trial (0-based) and the number of trials run.
    pub shuffle_winner: usize,
    pub shuffles_run: usize,
    /// Sup-residual over the whole data set after this step.
    pub residual_sup: f64,
    pub support_size: usize,
    /// The step's candidate, mapped back to the original feature basis.
    pub indices: Vec<usize>,
    pub coefficients: Vec<f64>,
}

/// Per-step audit trail of a run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GrimTrace {
    pub steps: Vec<StepRecord>,
    /// 1-based step with the smallest recorded sup-residual (0 when empty).
    pub best_step: usize,
}

impl GrimTrace {
    /// Selected functionals after `t` steps, in selection order.
    pub fn selected_upto(&self, t: usize) -> Vec<usize> {
        self.steps
            .iter()
            .take(t)
            .flat_map(|s| s.new_indices.iter().copied())
            .collect()
    }
}

/// Final approximation in the original feature basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrimResult {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// `max_σ |σ(φ − u)|` of the returned expansion.
    pub achieved_sup: f64,
    pub steps_completed: usize,
    pub terminated_early: bool,
    pub trace: GrimTrace,
}

impl GrimResult {
    /// `Σ |cₛ|·ν_{e(s)}`, which equals the preserved mass `C`.
    pub fn coefficient_mass(&self, feature_norms: &DVector<f64>) -> f64 {
        self.support
            .iter()
            .zip(&self.coefficients)
            .map(|(&i, &c)| c.abs() * feature_norms[i])
            .sum()
    }
}

/// Runs the full greedy loop.
///
/// The stopping residual is evaluated at the start of each step `t ≥ 2`
/// against `ε`; the step-1 candidate is always produced. When the budget is
/// exhausted the step-`M` candidate is returned, with the best-seen step
/// recorded in the trace.
pub fn run_grim(instance: &ProblemInstance, config: &GrimConfig) -> Result<GrimResult> {
    config.validate(instance)?;
    let norm = normalize_instance(instance)?;
    let epsilon0 = config.epsilon0_or_default(norm.mass);
    if epsilon0 >= config.epsilon {
        return Err(Error::Config(format!(
            "epsilon0 = {epsilon0} must be smaller than epsilon = {}",
            config.epsilon
        )));
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut selected_groups: HashSet<usize> = HashSet::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut current: Option<StepCandidate> = None;
    let mut terminated_early = false;

    for t in 1..=config.max_steps {
        if let Some(cand) = &current {
            if cand.e_value <= config.epsilon {
                terminated_early = true;
                break;
            }
        }
        let residual_now = match &current {
            None => norm.target.clone(),
            Some(c) => c.residual.clone(),
        };
        let k = config.k_schedule[t - 1];
        let new_indices = if config.grouped {
            let group_of = instance.group_of.as_ref().expect("validated");
            let rows = grouped_extension_step(&residual_now, group_of, &selected_groups, k)?;
            for &row in &rows {
                selected_groups.insert(group_of[row]);
            }
            rows
        } else {
            extension_step(&residual_now, &selected, k)?
        };
        selected.extend(new_indices.iter().copied());

        let cand = recombination_step(&norm, &selected, config.s_schedule[t - 1], config.seed, t)?;
        let sel_max = selected
            .iter()
            .map(|&j| cand.residual[j].abs())
            .fold(0.0_f64, f64::max);
        if sel_max > epsilon0 + INTERPOLATION_SLACK * norm.mass {
            return Err(Error::Numerical(format!(
                "step {t}: residual {sel_max:.3e} on a selected functional exceeds ε₀ = {epsilon0:.3e}"
            )));
        }
        let (indices, coefficients) = to_feature_basis(&norm, instance, &cand);
        steps.push(StepRecord {
            step: t,
            new_indices,
            shuffle_winner: cand.trial,
            shuffles_run: config.s_schedule[t - 1],
            residual_sup: cand.e_value,
            support_size: cand.indices.len(),
            indices,
            coefficients,
        });
        current = Some(cand);
    }

    let cand = current.expect("max_steps >= 1 produces a candidate");
    let (support, coefficients) = to_feature_basis(&norm, instance, &cand);
    // earliest step wins ties, matching every other tie-break in the loop
    let mut best_step = 0;
    let mut best_residual = f64::INFINITY;
    for (i, step) in steps.iter().enumerate() {
        if step.residual_sup < best_residual {
            best_residual = step.residual_sup;
            best_step = i + 1;
        }
    }
    Ok(GrimResult {
        support,
        coefficients,
        achieved_sup: cand.e_value,
        steps_completed: steps.len(),
        terminated_early,
        trace: GrimTrace {
            steps,
            best_step,
        },
    })
}

/// Maps a candidate from the normalized basis back to signed coefficients in
/// the original feature basis: `cⱼ = sign(a_{e(j)})·bⱼ/ν_{e(j)}`.
fn to_feature_basis(
    norm: &NormalizedInstance,
    instance: &ProblemInstance,
    cand: &StepCandidate,
) -> (Vec<usize>, Vec<f64>) {
    let coefficients = cand
        .indices
        .iter()
        .zip(&cand.coefficients)
        .map(|(&i, &b)| {
            let sign = if norm.sign_flips[i] { -1.0 } else { 1.0 };
            sign * b / instance.feature_norms[i]
        })
        .collect();
    (cand.indices.clone(), coefficients)
}
