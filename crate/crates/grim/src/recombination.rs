//! Support reduction for non-negative solutions of linear systems.
//!
//! Given a wide system `A·x = y` with `x ≥ 0`, translating `x` along
//! directions in `ker(A)` reaches a solution with at most `rank(A)` non-zero
//! entries while preserving both the system and non-negativity. The first row
//! of every system handled here is identically one, so the total coefficient
//! mass is one of the preserved quantities.
//!
//! [`recombine_basic`] performs the eliminations directly on the full system;
//! [`recombine_tree`] reaches the same contract through divide-and-conquer
//! over column blocks, which keeps the cost at `O(N·m + m³·log(N/m))` for an
//! `(m+1)×N` system. [`recombination_thin`] packages the construction used by
//! the greedy loop: a ones row stacked on top of selected functional rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values at or below this fraction of the largest count as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Default relative tolerance on the residual of a reduced solution.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Entries of a unit-norm kernel direction at or below this cannot serve as
/// elimination pivots.
const PIVOT_CUTOFF: f64 = 1e-12;

/// A linear system `A·x = A·w` whose non-negative solution `w` is to be
/// thinned. The first row of `A` must be identically one.
#[derive(Clone, Debug)]
pub struct ReductionSystem {
    matrix: DMatrix<f64>,
    weights: DVector<f64>,
    tolerance: f64,
}

impl ReductionSystem {
    pub fn new(matrix: DMatrix<f64>, weights: Vec<f64>, tolerance: f64) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Dimension("reduction system must be non-empty".into()));
        }
        if weights.len() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "weight vector has length {}, matrix has {} columns",
                weights.len(),
                matrix.ncols()
            )));
        }
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance must be finite and ≥ 0, got {tolerance}")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("reduction system matrix has non-finite entries".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Data(format!("reduction weights must be finite and ≥ 0, got {w}")));
        }
        let mut matrix = matrix;
        for i in 0..matrix.ncols() {
            if (matrix[(0, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!(
                    "first row must be identically one, entry {i} is {}",
                    matrix[(0, i)]
                )));
            }
            matrix[(0, i)] = 1.0;
        }
        Ok(Self {
            matrix,
            weights: DVector::from_vec(weights),
            tolerance,
        })
    }

    /// Internal constructor for subsystems whose invariants hold by
    /// construction (aggregated ones row, weights from a validated parent).
    pub(crate) fn new_unchecked(matrix: DMatrix<f64>, weights: DVector<f64>, tolerance: f64) -> Self {
        Self {
            matrix,
            weights,
            tolerance,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

/// A thinned solution: non-negative weights supported on at most as many
/// indices as the system has rows, reproducing `A·w` up to `residual_inf`.
#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub weights: DVector<f64>,
    pub support: Vec<usize>,
    pub residual_inf: f64,
}

/// Orthonormal basis of the kernel of the system matrix.
///
/// The row space comes from a singular value decomposition (relative cutoff
/// [`RANK_CUTOFF`]); the kernel is its orthonormal complement, completed by
/// pivoted Gram–Schmidt over coordinate directions. Returns one vector per
/// dimension of the numerical kernel.
pub fn svd_kernel_basis(system: &ReductionSystem) -> Result<Vec<DVector<f64>>> {
    let a = &system.matrix;
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("singular value decomposition failed".into()))?;
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0_f64, f64::max);

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let rank = sigma.iter().filter(|&&s| s > RANK_CUTOFF * smax).count();
    if rank >= n {
        return Ok(Vec::new());
    }

    // Orthonormal basis columns: the row space first (strongest singular
    // directions), then the kernel completion.
    let mut basis = DMatrix::<f64>::zeros(n, n);
    for (t, &i) in order.iter().take(rank).enumerate() {
        basis.column_mut(t).copy_from(&v_t.row(i).transpose());
    }
    let mut filled = rank;

    // Complete to an orthonormal basis of R^n. The coordinate direction with
    // the largest residual against the current basis is added next, which
    // keeps the completion well conditioned. Projection coefficients against
    // a coordinate vector are a basis row, so each round is two mat-vecs.
    let mut resid: Vec<f64> = (0..n)
        .map(|j| 1.0 - (0..rank).map(|t| basis[(j, t)] * basis[(j, t)]).sum::<f64>())
        .collect();
    let mut kernel = Vec::with_capacity(n - rank);
    while kernel.len() < n - rank {
        let mut jstar = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (j, &r) in resid.iter().enumerate() {
            if r > best {
                best = r;
                jstar = j;
            }
        }
        let b = basis.columns(0, filled);
        let mut v = DVector::zeros(n);
        v[jstar] = 1.0;
        if filled > 0 {
            let coeffs = b.row(jstar).transpose();
            v.gemv(-1.0, &b, &coeffs, 1.0);
            let second = b.tr_mul(&v);
            v.gemv(-1.0, &b, &second, 1.0);
        }
        let norm = v.norm();
        if norm <= 1e-8 {
            return Err(Error::Numerical("kernel basis completion collapsed".into()));
        }
        v /= norm;
        for (j, r) in resid.iter_mut().enumerate() {
            *r -= v[j] * v[j];
        }
        basis.column_mut(filled).copy_from(&v);
        filled += 1;
        kernel.push(v);
    }
    Ok(kernel)
}

/// Moves `weights` along `direction` until the first coordinate reaches zero.
///
/// The step is `θ = min{ weights[j]/direction[j] : direction[j] > 0 }`, ties
/// broken to the lowest index. A direction with only negative usable entries
/// is negated first. Returns the translated weights and the eliminated index.
pub fn eliminate_direction(
    weights: &DVector<f64>,
    direction: &DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    let clamp = DEFAULT_TOLERANCE * (1.0 + weights.sum());
    let d = normalize_sign(direction)?;
    eliminate_with_clamp(weights, &d, clamp)
}

/// Flips the sign of a kernel direction when it has no usable positive entry.
fn normalize_sign(direction: &DVector<f64>) -> Result<DVector<f64>> {
    if direction.amax() <= PIVOT_CUTOFF {
        return Err(Error::Numerical("kernel direction is numerically zero".into()));
    }
    if direction.iter().any(|&v| v > PIVOT_CUTOFF) {
        Ok(direction.clone())
    } else {
        Ok(-direction)
    }
}

fn eliminate_with_clamp(
    weights: &DVector<f64>,
    direction: &DVector<f64>,
    clamp: f64,
) -> Result<(DVector<f64>, usize)> {
    if weights.len() != direction.len() {
        return Err(Error::Dimension(format!(
            "weights have length {}, direction {}",
            weights.len(),
            direction.len()
        )));
    }
    let mut theta = f64::INFINITY;
    let mut idx = None;
    for j in 0..direction.len() {
        let d = direction[j];
        if d > PIVOT_CUTOFF {
            let ratio = weights[j] / d;
            if ratio < theta {
                theta = ratio;
                idx = Some(j);
            }
        }
    }
    let idx = idx.ok_or_else(|| {
        Error::Numerical("kernel direction has no entry above the positivity threshold".into())
    })?;
    let mut out = weights.clone();
    out.axpy(-theta, direction, 1.0);
    out[idx] = 0.0;
    for v in out.iter_mut() {
        if *v < 0.0 {
            if *v >= -clamp {
                *v = 0.0;
            } else {
                return Err(Error::Numerical(format!(
                    "elimination produced weight {v}, below the clamp threshold -{clamp:.3e}"
                )));
            }
        }
    }
    Ok((out, idx))
}

/// Thins a system by one elimination per kernel direction.
///
/// After each elimination the remaining directions are re-projected to vanish
/// at the eliminated index, so later translations cannot disturb coordinates
/// that were already pinned to zero.
pub fn recombine_basic(system: &ReductionSystem) -> Result<ReducedSolution> {
    let y0 = &system.matrix * &system.weights;
    let mut x = system.weights.clone();
    let mut dirs = svd_kernel_basis(system)?;
    let clamp = system.tolerance * (1.0 + x.sum());
    for j in 0..dirs.len() {
        let d = normalize_sign(&dirs[j])?;
        let (nx, idx) = eliminate_with_clamp(&x, &d, clamp)?;
        x = nx;
        let pivot = d[idx];
        for other in dirs.iter_mut().skip(j + 1) {
            let f = other[idx] / pivot;
            if f != 0.0 {
                other.axpy(-f, &d, 1.0);
            }
            other[idx] = 0.0;
            let norm = other.norm();
            if norm <= 1e-12 {
                return Err(Error::Numerical(
                    "kernel directions degenerated during elimination".into(),
                ));
            }
            *other /= norm;
        }
    }
    finalize(system, x, &y0)
}

/// Thins a system by recursive block aggregation, matching the contract of
/// [`recombine_basic`] at `O(N·m + m³·log(N/m))` cost.
///
/// Columns are grouped into `2·(m+1)` blocks per level; each block is
/// replaced by its weight-averaged column, the small aggregated system is
/// reduced directly, and surviving blocks keep their interior weights scaled
/// by the block factor. Levels repeat until at most `2·(m+1)` columns remain.
pub fn recombine_tree(system: &ReductionSystem) -> Result<ReducedSolution> {
    let a = &system.matrix;
    let rows = a.nrows();
    let width = 2 * rows;
    let y0 = a * &system.weights;
    let mut x = system.weights.clone();
    let mut active: Vec<usize> = (0..a.ncols()).filter(|&i| x[i] > 0.0).collect();

    while active.len() > width {
        let blocks = chunk_evenly(&active, width);
        let mut masses = Vec::with_capacity(blocks.len());
        let mut cols = DMatrix::zeros(rows, blocks.len());
        for (b, blk) in blocks.iter().enumerate() {
            let mass: f64 = blk.iter().map(|&i| x[i]).sum();
            for &i in blk.iter() {
                let s = x[i] / mass;
                for row in 1..rows {
                    cols[(row, b)] += s * a[(row, i)];
                }
            }
            cols[(0, b)] = 1.0;
            masses.push(mass);
        }
        let sub = ReductionSystem::new_unchecked(
            cols,
            DVector::from_column_slice(&masses),
            system.tolerance,
        );
        let sol = recombine_basic(&sub)?;
        let mut next = Vec::with_capacity(active.len() / 2 + rows);
        for (b, blk) in blocks.iter().enumerate() {
            if sol.weights[b] > 0.0 {
                let f = sol.weights[b] / masses[b];
                for &i in blk.iter() {
                    x[i] *= f;
                    if x[i] > 0.0 {
                        next.push(i);
                    }
                }
            } else {
                for &i in blk.iter() {
                    x[i] = 0.0;
                }
            }
        }
        active = next;
    }

    if !active.is_empty() {
        let sub_mat = DMatrix::from_fn(rows, active.len(), |row, c| a[(row, active[c])]);
        let sub_w = DVector::from_fn(active.len(), |c, _| x[active[c]]);
        let sub = ReductionSystem::new_unchecked(sub_mat, sub_w, system.tolerance);
        let sol = recombine_basic(&sub)?;
        for (c, &i) in active.iter().enumerate() {
            x[i] = sol.weights[c];
        }
    }
    finalize(system, x, &y0)
}

fn chunk_evenly(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let n = items.len();
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        if len == 0 {
            continue;
        }
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

fn finalize(system: &ReductionSystem, x: DVector<f64>, y0: &DVector<f64>) -> Result<ReducedSolution> {
    let residual_inf = (&system.matrix * &x - y0).amax();
    let bound = system.tolerance * (1.0 + y0.amax());
    if residual_inf > bound {
        return Err(Error::Numerical(format!(
            "reduction residual {residual_inf:.3e} exceeds the tolerance bound {bound:.3e}"
        )));
    }
    let support: Vec<usize> = x.iter().enumerate().filter(|&(_, &v)| v > 0.0).map(|(i, _)| i).collect();
    if support.len() > system.matrix.nrows() {
        return Err(Error::Numerical(format!(
            "support {} exceeds the row count {}",
            support.len(),
            system.matrix.nrows()
        )));
    }
    Ok(ReducedSolution {
        weights: x,
        support,
        residual_inf,
    })
}

/// A short expansion over the original feature indices.
#[derive(Clone, Debug)]
pub struct ThinExpansion {
    pub coefficients: Vec<f64>,
    pub indices: Vec<usize>,
}

/// Reduces a positive expansion to at most `selected.len() + 1` features
/// while matching the total mass and every selected functional row.
///
/// The reduction system stacks a ones row on top of the rows of
/// `h_evaluations` named by `selected`, in the given order. An empty
/// selection is legal and collapses all mass onto a single feature.
pub fn recombination_thin(
    h_evaluations: &DMatrix<f64>,
    alpha: &[f64],
    selected: &[usize],
) -> Result<ThinExpansion> {
    let n = h_evaluations.ncols();
    if alpha.len() != n {
        return Err(Error::Dimension(format!(
            "alpha has length {}, evaluations have {n} columns",
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Data(format!("normalized weights must be positive, got {a}")));
    }
    if let Some(&j) = selected.iter().find(|&&j| j >= h_evaluations.nrows()) {
        return Err(Error::Dimension(format!(
            "selected functional {j} out of range (Λ = {})",
            h_evaluations.nrows()
        )));
    }
    let mut mat = DMatrix::zeros(selected.len() + 1, n);
    for i in 0..n {
        mat[(0, i)] = 1.0;
    }
    for (t, &j) in selected.iter().enumerate() {
        for i in 0..n {
            mat[(t + 1, i)] = h_evaluations[(j, i)];
        }
    }
    let system = ReductionSystem::new(mat, alpha.to_vec(), DEFAULT_TOLERANCE)?;
    let sol = recombine_tree(&system)?;
    Ok(ThinExpansion {
        coefficients: sol.support.iter().map(|&i| sol.weights[i]).collect(),
        indices: sol.support,
    })
}
