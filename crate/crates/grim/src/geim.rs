//! Generalised empirical interpolation baseline.
//!
//! A feature-driven greedy method: at each step the feature with the largest
//! interpolation error in the ambient norm is added, then the functional at
//! which its residual is largest. The resulting basis `q₁,…,qₙ` satisfies
//! `σⱼ(qⱼ) = 1` and `σᵢ(qⱼ) = 0` for `i < j`, so interpolation reduces to a
//! unit lower triangular solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grim::ProblemInstance;

/// Ambient-norm evaluator for expansions in the feature basis.
pub trait NormOracle {
    /// Norm of `Σ coefficients[k] · f_{indices[k]}`.
    fn norm(&self, indices: &[usize], coefficients: &[f64]) -> f64;
}

/// Norm backed by a feature Gram matrix: `‖Σ cᵢfᵢ‖² = cᵀGc`.
#[derive(Clone, Debug)]
pub struct GramNorm {
    gram: DMatrix<f64>,
}

impl GramNorm {
    pub fn new(gram: DMatrix<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(Error::Dimension("Gram matrix must be square".into()));
        }
        Ok(Self { gram })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

impl NormOracle for GramNorm {
    fn norm(&self, indices: &[usize], coefficients: &[f64]) -> f64 {
        let mut q = 0.0;
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                q += coefficients[a] * coefficients[b] * self.gram[(i, j)];
            }
        }
        q.max(0.0).sqrt()
    }
}

/// Norm backed by sampled feature values: column `i` of `values` holds `fᵢ`
/// on the sample points, and `quad_weights` are the quadrature weights.
#[derive(Clone, Debug)]
pub struct SampledNorm {
    values: DMatrix<f64>,
    quad_weights: DVector<f64>,
}

impl SampledNorm {
    pub fn new(values: DMatrix<f64>, quad_weights: DVector<f64>) -> Result<Self> {
        if values.nrows() != quad_weights.len() {
            return Err(Error::Dimension(format!(
                "{} sample rows but {} quadrature weights",
                values.nrows(),
                quad_weights.len()
            )));
        }
        Ok(Self { values, quad_weights })
    }
}

impl NormOracle for SampledNorm {
    fn norm(&self, indices: &[usize], coefficients: &[f64]) -> f64 {
        let mut q = 0.0;
        for p in 0..self.values.nrows() {
            let mut v = 0.0;
            for (k, &i) in indices.iter().enumerate() {
                v += coefficients[k] * self.values[(p, i)];
            }
            q += self.quad_weights[p] * v * v;
        }
        q.max(0.0).sqrt()
    }
}

/// Fitted interpolation state: nested bases and their functional evaluations.
#[derive(Clone, Debug)]
pub struct GeimState {
    pub selected_features: Vec<usize>,
    pub selected_functionals: Vec<usize>,
    /// `qⱼ` as coefficient vectors in the feature basis.
    pub basis_q: Vec<DVector<f64>>,
    /// `σᵢ(qⱼ)`: unit lower triangular by construction.
    pub q_evaluations: DMatrix<f64>,
    /// Rows of the evaluation matrix for the selected functionals.
    functional_rows: DMatrix<f64>,
}

impl GeimState {
    pub fn len(&self) -> usize {
        self.basis_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis_q.is_empty()
    }
}

/// A fit together with the per-step interpolants of the target.
#[derive(Clone, Debug)]
pub struct GeimFit {
    pub state: GeimState,
    /// `Jₙ[φ]` after each step, as coefficient vectors in the feature basis.
    pub interpolants: Vec<DVector<f64>>,
    /// `‖φ − Jₙ[φ]‖` after each step.
    pub errors: Vec<f64>,
}

/// Runs the greedy fit for up to `n_max` steps, stopping early once the
/// target's interpolation error drops to `stop_tol`.
pub fn geim_fit(
    instance: &ProblemInstance,
    oracle: &dyn NormOracle,
    n_max: usize,
    stop_tol: f64,
) -> Result<GeimFit> {
    let n_features = instance.n_features();
    let n_functionals = instance.n_functionals();
    if n_max == 0 || n_max > n_features.min(n_functionals) {
        return Err(Error::Config(format!(
            "n_max must lie in 1..=min(N, Λ) = {}, got {n_max}",
            n_features.min(n_functionals)
        )));
    }
    let mass: f64 = (0..n_features)
        .map(|i| instance.weights[i].abs() * instance.feature_norms[i])
        .sum();
    let degenerate = 1e-12 * mass;

    let mut state = GeimState {
        selected_features: Vec::new(),
        selected_functionals: Vec::new(),
        basis_q: Vec::new(),
        q_evaluations: DMatrix::zeros(0, 0),
        functional_rows: DMatrix::zeros(0, n_features),
    };
    let mut interpolants = Vec::new();
    let mut errors = Vec::new();

    for _ in 0..n_max {
        let n = state.len();
        // q-values restricted to the selected features, for sparse residuals
        let q_on_selected: Vec<Vec<f64>> = state
            .basis_q
            .iter()
            .map(|q| state.selected_features.iter().map(|&s| q[s]).collect())
            .collect();

        let mut best_feature = 0usize;
        let mut best_value = f64::NEG_INFINITY;
        let mut best_combo: Vec<f64> = Vec::new();
        for i in 0..n_features {
            let (value, combo) = if n == 0 {
                (oracle.norm(&[i], &[1.0]), Vec::new())
            } else {
                let sigma_vals: Vec<f64> =
                    (0..n).map(|t| state.functional_rows[(t, i)]).collect();
                let gamma = forward_solve(&state.q_evaluations, &sigma_vals);
                // residual = e_i − Σ γⱼ qⱼ, supported on {i} ∪ selected
                let mut idx: Vec<usize> = state.selected_features.clone();
                let mut val: Vec<f64> = (0..n)
                    .map(|k| -(0..n).map(|j| gamma[j] * q_on_selected[j][k]).sum::<f64>())
                    .collect();
                if let Some(pos) = state.selected_features.iter().position(|&s| s == i) {
                    val[pos] += 1.0;
                } else {
                    idx.push(i);
                    val.push(1.0);
                }
                (oracle.norm(&idx, &val), gamma)
            };
            if value > best_value {
                best_value = value;
                best_feature = i;
                best_combo = combo;
            }
        }
        if best_value <= degenerate {
            break; // every feature is already interpolated
        }

        // dense residual of the chosen feature
        let mut r = DVector::zeros(n_features);
        r[best_feature] += 1.0;
        for (j, &g) in best_combo.iter().enumerate() {
            r.axpy(-g, &state.basis_q[j], 1.0);
        }
        let sigma_r = &instance.evaluations * &r;
        let mut best_functional = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for j in 0..n_functionals {
            let a = sigma_r[j].abs();
            if a > best_abs {
                best_abs = a;
                best_functional = j;
            }
        }
        let normalizer = sigma_r[best_functional];
        if normalizer.abs() <= degenerate {
            return Err(Error::Numerical(format!(
                "step {}: normalizer {normalizer:.3e} below threshold",
                n + 1
            )));
        }
        let q = r / normalizer;

        state.selected_features.push(best_feature);
        state.selected_functionals.push(best_functional);
        state.basis_q.push(q);
        let rows = state.selected_functionals.len();
        state.functional_rows = DMatrix::from_fn(rows, n_features, |t, i| {
            instance.evaluations[(state.selected_functionals[t], i)]
        });
        state.q_evaluations = DMatrix::from_fn(rows, rows, |t, j| {
            state.functional_rows.row(t).transpose().dot(&state.basis_q[j])
        });

        let j_phi = geim_interpolate(&state, &instance.weights)?;
        let diff = &instance.weights - &j_phi;
        let all_idx: Vec<usize> = (0..n_features).collect();
        let diff_vals: Vec<f64> = diff.iter().copied().collect();
        let err = oracle.norm(&all_idx, &diff_vals);
        interpolants.push(j_phi);
        errors.push(err);
        if err <= stop_tol {
            break;
        }
    }

    if state.is_empty() {
        return Err(Error::Numerical("no feature has a norm above threshold".into()));
    }
    Ok(GeimFit {
        state,
        interpolants,
        errors,
    })
}

/// Interpolates `w` on the fitted state: `σ(w − Jₙ[w]) = 0` for every
/// selected functional.
pub fn geim_interpolate(state: &GeimState, w: &DVector<f64>) -> Result<DVector<f64>> {
    if state.is_empty() {
        return Err(Error::Config("interpolation state is empty".into()));
    }
    let n_features = state.functional_rows.ncols();
    if w.len() != n_features {
        return Err(Error::Dimension(format!(
            "vector has length {}, expected {n_features}",
            w.len()
        )));
    }
    let sigma_w: Vec<f64> = (0..state.len())
        .map(|t| state.functional_rows.row(t).transpose().dot(w))
        .collect();
    let gamma = forward_solve(&state.q_evaluations, &sigma_w);
    let mut out = DVector::zeros(n_features);
    for (j, &g) in gamma.iter().enumerate() {
        out.axpy(g, &state.basis_q[j], 1.0);
    }
    Ok(out)
}

/// Solves the unit lower triangular system `σᵢ(q)·γ = rhs` by forward
/// substitution, dividing by the (unit) diagonal explicitly to absorb
/// round-off in `σⱼ(qⱼ)`.
fn forward_solve(q_evaluations: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut gamma = vec![0.0; n];
    for i in 0..n {
        let mut v = rhs[i];
        for j in 0..i {
            v -= q_evaluations[(i, j)] * gamma[j];
        }
        gamma[i] = v / q_evaluations[(i, i)];
    }
    gamma
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two features on a two-point domain with coordinate functionals.
    fn hand_instance() -> (ProblemInstance, SampledNorm) {
        // f1 = (1, 0), f2 = (1, 1); σⱼ = evaluation at point j
        let evals = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let norms = DVector::from_vec(vec![1.0, 2.0_f64.sqrt()]);
        let instance =
            ProblemInstance::new(evals.clone(), DVector::from_element(2, 1.0), Some(norms))
                .unwrap();
        let oracle = SampledNorm::new(evals, DVector::from_element(2, 1.0)).unwrap();
        (instance, oracle)
    }

    #[test]
    fn hand_traced_fit() {
        let (instance, oracle) = hand_instance();
        let fit = geim_fit(&instance, &oracle, 2, 0.0).unwrap();
        assert_eq!(fit.state.selected_features, vec![1, 0]);
        assert_eq!(fit.state.selected_functionals, vec![0, 1]);
        // q1 = f2 (coefficients (0, 1)), q2 = f2 − f1 (coefficients (−1, 1))
        assert!((fit.state.basis_q[0][0] - 0.0).abs() < 1e-12);
        assert!((fit.state.basis_q[0][1] - 1.0).abs() < 1e-12);
        assert!((fit.state.basis_q[1][0] + 1.0).abs() < 1e-12);
        assert!((fit.state.basis_q[1][1] - 1.0).abs() < 1e-12);
        // J_2[f1] = f1
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let j = geim_interpolate(&fit.state, &w).unwrap();
        assert!((j - w).amax() < 1e-12);
    }

    #[test]
    fn single_feature_is_exact() {
        let evals = DMatrix::from_row_slice(1, 1, &[2.0]);
        let instance =
            ProblemInstance::new(evals.clone(), DVector::from_vec(vec![1.5]), None).unwrap();
        let oracle = SampledNorm::new(evals, DVector::from_element(1, 1.0)).unwrap();
        let fit = geim_fit(&instance, &oracle, 1, 0.0).unwrap();
        assert!(fit.errors[0] < 1e-12);
        let j = &fit.interpolants[0];
        assert!((j[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn full_rank_fit_reproduces_target() {
        let evals = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.2, 0.4, 0.1, 1.0, 0.3, 0.5, 0.1, 1.0],
        );
        let instance = ProblemInstance::new(
            evals.clone(),
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            None,
        )
        .unwrap();
        let oracle = SampledNorm::new(evals, DVector::from_element(3, 1.0)).unwrap();
        let fit = geim_fit(&instance, &oracle, 3, 0.0).unwrap();
        let last = fit.errors.last().unwrap();
        assert!(*last < 1e-8, "full interpolation should be exact, got {last}");
    }

    #[test]
    fn basis_reproduction_and_zero() {
        let (instance, oracle) = hand_instance();
        let fit = geim_fit(&instance, &oracle, 2, 0.0).unwrap();
        let q1 = fit.state.basis_q[0].clone();
        let j = geim_interpolate(&fit.state, &q1).unwrap();
        assert!((j - &q1).amax() < 1e-12);
        let zero = DVector::zeros(2);
        let jz = geim_interpolate(&fit.state, &zero).unwrap();
        assert!(jz.amax() < 1e-12);
    }

    #[test]
    fn unit_lower_triangular_structure() {
        let (instance, oracle) = hand_instance();
        let fit = geim_fit(&instance, &oracle, 2, 0.0).unwrap();
        let q = &fit.state.q_evaluations;
        for j in 0..q.ncols() {
            assert!((q[(j, j)] - 1.0).abs() < 1e-9);
            for i in 0..j {
                assert!(q[(i, j)].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolation_annihilates_selected_functionals() {
        let (instance, oracle) = hand_instance();
        let fit = geim_fit(&instance, &oracle, 2, 0.0).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.7]);
        let j = geim_interpolate(&fit.state, &w).unwrap();
        let diff = &instance.evaluations * (&w - &j);
        for &f in &fit.state.selected_functionals {
            assert!(diff[f].abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_oversized_n_max() {
        let (instance, oracle) = hand_instance();
        assert!(geim_fit(&instance, &oracle, 3, 0.0).is_err());
    }
}
