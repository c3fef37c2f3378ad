//! Concrete problem instances: a self-generating `L²` benchmark family,
//! moment-preserving cubature, and generic CSV-loaded instances.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geim::{GramNorm, NormOracle};
use crate::grim::ProblemInstance;
use crate::kernel::PointCloud;
use crate::recombination::{recombination_thin, ThinExpansion};

/// Parameter box for the benchmark family, `(a, b) ∈ [0.01, 24.9] × [0, 15]`.
pub const A_RANGE: (f64, f64) = (0.01, 24.9);
pub const B_RANGE: (f64, f64) = (0.0, 15.0);

/// One member of the benchmark family on `[0, 1]`.
pub fn l2_feature(a: f64, b: f64, x: f64) -> f64 {
    1.0 / (1.0 + (25.0 + a * (b * x).cos()) * x * x).sqrt()
}

/// Configuration of the `L²` benchmark: an `n_grid × n_grid` parameter grid
/// of features and `n_functionals` narrow Gaussian window averages.
#[derive(Clone, Debug)]
pub struct L2DemoSpec {
    pub n_grid: usize,
    pub n_functionals: usize,
    pub mollifier_width: f64,
    /// Uniform grid on `[0, 1]` used for the feature Gram matrix.
    pub fine_grid_points: usize,
}

impl L2DemoSpec {
    /// The benchmark defaults: 1000 functionals of width `5·10⁻⁴`, with a
    /// 20001-point global grid.
    pub fn new(n_grid: usize) -> Self {
        Self {
            n_grid,
            n_functionals: 1000,
            mollifier_width: 5e-4,
            fine_grid_points: 20001,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_grid == 0 || self.n_functionals == 0 {
            return Err(Error::Config("grid and functional counts must be positive".into()));
        }
        if !(self.mollifier_width > 0.0) {
            return Err(Error::Config(format!(
                "mollifier width must be positive, got {}",
                self.mollifier_width
            )));
        }
        if self.fine_grid_points < 2 {
            return Err(Error::Config("fine grid needs at least two points".into()));
        }
        let h = 1.0 / (self.fine_grid_points - 1) as f64;
        if self.mollifier_width / h < 8.0 {
            return Err(Error::Config(format!(
                "fine grid too coarse: {:.1} points per window width, need ≥ 8",
                self.mollifier_width / h
            )));
        }
        Ok(())
    }
}

/// A built benchmark: the instance, an `L²` norm oracle backed by the
/// feature Gram matrix, and the `(a, b)` parameter of each feature.
pub struct L2Demo {
    pub instance: ProblemInstance,
    pub norm: GramNorm,
    pub params: Vec<(f64, f64)>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Average of `f` against the Gaussian window at `y`, normalized by the
/// window mass over `[0, 1]`. Composite trapezoid on a local sub-grid
/// covering `y ± 6s`.
fn mollified_average(y: f64, s: f64, f: impl Fn(f64) -> f64) -> f64 {
    const LOCAL_POINTS: usize = 241;
    let lo = (y - 6.0 * s).max(0.0);
    let hi = (y + 6.0 * s).min(1.0);
    let h = (hi - lo) / (LOCAL_POINTS - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..LOCAL_POINTS {
        let x = lo + h * p as f64;
        let t = (x - y) / s;
        let w = (-0.5 * t * t).exp() * if p == 0 || p == LOCAL_POINTS - 1 { 0.5 } else { 1.0 };
        num += w * f(x);
        den += w;
    }
    num / den
}

/// Builds the benchmark instance: features over the parameter grid
/// (`a` varying fastest), window-average functionals, unit weights, and
/// trapezoid `L²` feature norms.
pub fn build_l2_demo(spec: &L2DemoSpec) -> Result<L2Demo> {
    spec.validate()?;
    let n = spec.n_grid;
    let a_grid = linspace(A_RANGE.0, A_RANGE.1, n);
    let b_grid = linspace(B_RANGE.0, B_RANGE.1, n);
    let mut params = Vec::with_capacity(n * n);
    for &b in &b_grid {
        for &a in &a_grid {
            params.push((a, b));
        }
    }
    let n_features = params.len();

    let y_grid = linspace(0.0, 1.0, spec.n_functionals);
    let s = spec.mollifier_width;
    let phi_rows: Vec<Vec<f64>> = y_grid
        .par_iter()
        .map(|&y| {
            params
                .iter()
                .map(|&(a, b)| mollified_average(y, s, |x| l2_feature(a, b, x)))
                .collect()
        })
        .collect();
    let mut evaluations = DMatrix::zeros(spec.n_functionals, n_features);
    for (k, row) in phi_rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            evaluations[(k, i)] = v;
        }
    }

    // feature values on the global grid, then the Gram matrix
    let fine = linspace(0.0, 1.0, spec.fine_grid_points);
    let h = 1.0 / (spec.fine_grid_points - 1) as f64;
    let values: Vec<Vec<f64>> = params
        .par_iter()
        .map(|&(a, b)| fine.iter().map(|&x| l2_feature(a, b, x)).collect())
        .collect();
    let weighted: Vec<Vec<f64>> = values
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = row.iter().map(|v| v * h).collect();
            out[0] *= 0.5;
            let last = out.len() - 1;
            out[last] *= 0.5;
            out
        })
        .collect();
    let gram_rows: Vec<Vec<f64>> = (0..n_features)
        .into_par_iter()
        .map(|i| {
            (i..n_features)
                .map(|l| {
                    weighted[i]
                        .iter()
                        .zip(&values[l])
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let mut gram = DMatrix::zeros(n_features, n_features);
    for i in 0..n_features {
        for (off, &v) in gram_rows[i].iter().enumerate() {
            gram[(i, i + off)] = v;
            gram[(i + off, i)] = v;
        }
    }
    let norms = DVector::from_fn(n_features, |i, _| gram[(i, i)].sqrt());

    let instance = ProblemInstance::new(
        evaluations,
        DVector::from_element(n_features, 1.0),
        Some(norms),
    )?;
    Ok(L2Demo {
        instance,
        norm: GramNorm::new(gram)?,
        params,
    })
}

/// `L²` and sup-over-`Σ` errors of a candidate expansion against the target.
pub fn eval_l2_metrics(
    instance: &ProblemInstance,
    norm: &GramNorm,
    indices: &[usize],
    coefficients: &[f64],
) -> Result<(f64, f64)> {
    let n = instance.n_features();
    if indices.len() != coefficients.len() {
        return Err(Error::Dimension(format!(
            "{} indices for {} coefficients",
            indices.len(),
            coefficients.len()
        )));
    }
    let mut diff: Vec<f64> = instance.weights.iter().copied().collect();
    for (&i, &c) in indices.iter().zip(coefficients) {
        if i >= n {
            return Err(Error::Dimension(format!("feature index {i} out of range")));
        }
        diff[i] -= c;
    }
    let all: Vec<usize> = (0..n).collect();
    let l2 = norm.norm(&all, &diff);
    let mut sup = 0.0_f64;
    for j in 0..instance.n_functionals() {
        let mut u = 0.0;
        for (&i, &c) in indices.iter().zip(coefficients) {
            u += c * instance.evaluations[(j, i)];
        }
        sup = sup.max((instance.target[j] - u).abs());
    }
    Ok((l2, sup))
}

/// Moment-matching cubature configuration: all monomials of total degree at
/// most `max_degree` in `dimension` variables.
#[derive(Clone, Copy, Debug)]
pub struct MomentSpec {
    pub max_degree: usize,
    pub dimension: usize,
}

impl MomentSpec {
    /// `C(max_degree + dimension, dimension)` monomials.
    pub fn n_moments(&self) -> usize {
        binomial(self.max_degree + self.dimension, self.dimension)
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut out: usize = 1;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Multi-indices `e` with `|e| ≤ max_degree`, ordered by total degree then
/// lexicographically.
pub fn multi_indices(spec: &MomentSpec) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(spec.n_moments());
    for degree in 0..=spec.max_degree {
        let mut current = vec![0usize; spec.dimension];
        fill_degree(&mut out, &mut current, 0, degree);
    }
    out
}

fn fill_degree(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, pos: usize, remaining: usize) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for e in 0..=remaining {
        current[pos] = e;
        fill_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// Builds the cubature instance: one functional row per monomial, evaluated
/// over the cloud. Weights must be strictly positive.
pub fn build_monomial_cubature(
    cloud: &PointCloud,
    weights: &[f64],
    spec: &MomentSpec,
) -> Result<ProblemInstance> {
    if spec.dimension != cloud.dim() {
        return Err(Error::Dimension(format!(
            "moment dimension {} does not match cloud dimension {}",
            spec.dimension,
            cloud.dim()
        )));
    }
    if weights.len() != cloud.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} points",
            weights.len(),
            cloud.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Data("cubature weights must be strictly positive".into()));
    }
    let exponents = multi_indices(spec);
    let mut evaluations = DMatrix::zeros(exponents.len(), cloud.len());
    for (r, e) in exponents.iter().enumerate() {
        for i in 0..cloud.len() {
            let mut v = 1.0;
            for (t, &p) in e.iter().enumerate() {
                v *= cloud.point(i)[t].powi(p as i32);
            }
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "monomial of degree {} overflows at point {i}; rescale the cloud toward [-1, 1]^d",
                    e.iter().sum::<usize>()
                )));
            }
            evaluations[(r, i)] = v;
        }
    }
    ProblemInstance::new(
        evaluations,
        DVector::from_column_slice(weights),
        None,
    )
}

/// Reduces an empirical measure while preserving every moment of total
/// degree at most `spec.max_degree`: one recombination over all monomial
/// rows, giving support at most `n_moments + 1`.
pub fn reduce_cubature(
    cloud: &PointCloud,
    weights: &[f64],
    spec: &MomentSpec,
) -> Result<(ProblemInstance, ThinExpansion)> {
    let instance = build_monomial_cubature(cloud, weights, spec)?;
    let all_rows: Vec<usize> = (0..instance.n_functionals()).collect();
    let alpha: Vec<f64> = instance.weights.iter().copied().collect();
    let thin = recombination_thin(&instance.evaluations, &alpha, &all_rows)?;
    Ok((instance, thin))
}

fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for (col, token) in trimmed.split(',').enumerate() {
            let token = token.trim();
            let value: f64 = token.parse().map_err(|_| {
                Error::Data(format!(
                    "{}:{}: column {}: invalid number '{token}'",
                    path.display(),
                    line_no + 1,
                    col + 1
                ))
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn rows_to_matrix(path: &Path, rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Data(format!(
                "{}: row {} has {} columns, expected {cols}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Loads a matrix of comma-separated values; `#`-prefixed lines are skipped.
pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    rows_to_matrix(path, read_numeric_rows(path)?)
}

/// Loads a vector: one value per line, or comma-separated values.
pub fn load_vector_csv(path: &Path) -> Result<Vec<f64>> {
    Ok(read_numeric_rows(path)?.into_iter().flatten().collect())
}

/// Loads a point cloud, optionally with a trailing weight column.
pub fn load_point_cloud(path: &Path, weighted: bool) -> Result<(PointCloud, Option<Vec<f64>>)> {
    let matrix = load_matrix_csv(path)?;
    if weighted && matrix.ncols() < 2 {
        return Err(Error::Data(format!(
            "{}: weighted cloud needs at least one coordinate column plus the weight column",
            path.display()
        )));
    }
    let d = if weighted { matrix.ncols() - 1 } else { matrix.ncols() };
    let points: Vec<Vec<f64>> = (0..matrix.nrows())
        .map(|i| (0..d).map(|j| matrix[(i, j)]).collect())
        .collect();
    let weights = weighted.then(|| (0..matrix.nrows()).map(|i| matrix[(i, d)]).collect());
    Ok((PointCloud::new(points)?, weights))
}

/// Loads a full instance from CSV files: the `Λ×N` evaluation matrix, the
/// `N` feature weights, and optionally the `N` feature norms (defaulting to
/// one with a logged notice).
pub fn load_csv_instance(
    eval_path: &Path,
    weights_path: &Path,
    norms_path: Option<&Path>,
) -> Result<ProblemInstance> {
    let evaluations = load_matrix_csv(eval_path)?;
    let weights = load_vector_csv(weights_path)?;
    if weights.len() != evaluations.ncols() {
        return Err(Error::Data(format!(
            "{} weights for {} evaluation columns",
            weights.len(),
            evaluations.ncols()
        )));
    }
    let norms = match norms_path {
        Some(p) => {
            let v = load_vector_csv(p)?;
            if v.len() != evaluations.ncols() {
                return Err(Error::Data(format!(
                    "{} norms for {} evaluation columns",
                    v.len(),
                    evaluations.ncols()
                )));
            }
            Some(DVector::from_vec(v))
        }
        None => {
            log::info!("no norms file supplied; feature norms default to 1");
            None
        }
    };
    ProblemInstance::new(evaluations, DVector::from_vec(weights), norms)
}
