//! Kernel quadrature on empirical measures.
//!
//! The data set is the family of kernel sections `k(·, xⱼ)` over a point
//! cloud, so matching a measure on every section controls the worst-case
//! quadrature error over the unit ball of the associated RKHS. The greedy
//! loop inherits convexity of the weights from the positive input measure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grim::{run_grim, GrimConfig, GrimResult, GrimTrace, ProblemInstance};

/// Clouds up to this size get a dual-distance matrix attached for the
/// separation diagnostics; larger clouds skip the quadratic-cost build.
const DUAL_DISTANCE_CAP: usize = 256;

/// A finite set of points in `R^d`.
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Data("point cloud must be non-empty with d ≥ 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Dimension(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("point {i} has non-finite coordinates")));
            }
        }
        Ok(Self { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Gaussian radial basis kernel `k(x, y) = exp(−‖x−y‖²/(2λ²))`.
#[derive(Clone, Copy, Debug)]
pub struct KernelSpec {
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "points have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !(spec.bandwidth > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {}", spec.bandwidth)));
    }
    Ok(rbf_unchecked(x, y, spec.bandwidth))
}

fn rbf_unchecked(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    (-squared_distance(x, y) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median of pairwise Euclidean distances over a uniform subsample of at
/// most `max_sample` points (the mean of the two middle values for an even
/// count). Errors when every sampled point coincides.
pub fn median_heuristic(cloud: &PointCloud, max_sample: usize, seed: u64) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::Data("median heuristic needs at least two points".into()));
    }
    let sample: Vec<usize> = if cloud.len() <= max_sample {
        (0..cloud.len()).collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), max_sample).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut distances = Vec::with_capacity(sample.len() * (sample.len() - 1) / 2);
    for (a, &i) in sample.iter().enumerate() {
        for &j in &sample[a + 1..] {
            distances.push(squared_distance(cloud.point(i), cloud.point(j)).sqrt());
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = distances.len();
    let median = if n % 2 == 1 {
        distances[n / 2]
    } else {
        (distances[n / 2 - 1] + distances[n / 2]) / 2.0
    };
    if median <= 0.0 {
        return Err(Error::Data("all sampled points coincide; bandwidth would be zero".into()));
    }
    Ok(median)
}

/// Kernel matrix `K[i][j] = k(xᵢ, xⱼ)` over the cloud.
pub fn gram_matrix(cloud: &PointCloud, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if cloud.is_empty() {
        return Err(Error::Data("point cloud is empty".into()));
    }
    let n = cloud.len();
    let bw = spec.bandwidth;
    if !(bw > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bw}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        rbf_unchecked(cloud.point(i), cloud.point(j), bw)
                    }
                })
                .collect()
        })
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k[(i, j)] = v;
        }
    }
    // enforce exact symmetry against rounding in the parallel fill
    for i in 0..n {
        for j in (i + 1)..n {
            let v = k[(i, j)];
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Squared worst-case error between the measures with weights `a` and `w`
/// over the unit ball of the RKHS: `(a−w)ᵀ·K·(a−w)`, clamped at zero.
pub fn wce_squared(a: &[f64], w: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    let n = gram.nrows();
    if a.len() != n || w.len() != n || gram.ncols() != n {
        return Err(Error::Dimension(format!(
            "weights of lengths {} and {} against a {}×{} kernel matrix",
            a.len(),
            w.len(),
            n,
            gram.ncols()
        )));
    }
    let d = DVector::from_fn(n, |i, _| a[i] - w[i]);
    let q = d.dot(&(gram * &d));
    Ok(q.max(0.0))
}

/// Convex quadrature over a subset of cloud points.
#[derive(Clone, Debug)]
pub struct QuadratureResult {
    pub node_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub wce_squared: f64,
}

/// Builds the kernel-section instance for `μ = Σ mu_weights[i]·δ_{xᵢ}` and
/// reduces it with the greedy loop. Returns the convex quadrature together
/// with the raw run for trace inspection.
pub fn kernel_quadrature_grim(
    cloud: &PointCloud,
    mu_weights: &[f64],
    spec: &KernelSpec,
    config: &GrimConfig,
) -> Result<(QuadratureResult, GrimResult)> {
    let n = cloud.len();
    if mu_weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} weights for {n} points",
            mu_weights.len()
        )));
    }
    if mu_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Data("measure weights must be strictly positive".into()));
    }
    let total: f64 = mu_weights.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Data(format!("measure weights must sum to one, got {total}")));
    }
    if n == 1 {
        // a single point mass is its own quadrature
        let quad = QuadratureResult {
            node_indices: vec![0],
            weights: vec![1.0],
            wce_squared: 0.0,
        };
        let grim = GrimResult {
            support: vec![0],
            coefficients: vec![1.0],
            achieved_sup: 0.0,
            steps_completed: 0,
            terminated_early: true,
            trace: GrimTrace::default(),
        };
        return Ok((quad, grim));
    }
    let gram = gram_matrix(cloud, spec)?;
    let mut instance = ProblemInstance::new(
        gram.clone(),
        DVector::from_column_slice(mu_weights),
        None,
    )?;
    if n <= DUAL_DISTANCE_CAP {
        instance = instance.with_dual_distance(dual_distance_matrix(&gram))?;
    }
    let grim = run_grim(&instance, config)?;

    let mut sum = 0.0;
    for (&i, &c) in grim.support.iter().zip(&grim.coefficients) {
        if c < 0.0 {
            return Err(Error::Numerical(format!(
                "quadrature weight {c} at node {i} is negative"
            )));
        }
        sum += c;
    }
    if !grim.support.is_empty() && (sum - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "quadrature weights sum to {sum}, expected 1"
        )));
    }
    let mut w_full = vec![0.0; n];
    for (&i, &c) in grim.support.iter().zip(&grim.coefficients) {
        w_full[i] = c;
    }
    let wce2 = wce_squared(mu_weights, &w_full, &gram)?;
    Ok((
        QuadratureResult {
            node_indices: grim.support.clone(),
            weights: grim.coefficients.clone(),
            wce_squared: wce2,
        },
        grim,
    ))
}

/// Dual (sup) distance between the kernel sections at `xᵢ` and `xⱼ`,
/// realized on the finite cloud: `max_z |k(z, xᵢ) − k(z, xⱼ)|`.
pub fn functional_sup_distance(
    i: usize,
    j: usize,
    cloud: &PointCloud,
    spec: &KernelSpec,
) -> Result<f64> {
    if i >= cloud.len() || j >= cloud.len() {
        return Err(Error::Dimension(format!(
            "indices ({i}, {j}) out of range for a cloud of {}",
            cloud.len()
        )));
    }
    let bw = spec.bandwidth;
    let mut best = 0.0_f64;
    for z in 0..cloud.len() {
        let d = (rbf_unchecked(cloud.point(z), cloud.point(i), bw)
            - rbf_unchecked(cloud.point(z), cloud.point(j), bw))
        .abs();
        best = best.max(d);
    }
    Ok(best)
}

/// Full matrix of [`functional_sup_distance`] values, read off the kernel
/// matrix column differences.
pub fn dual_distance_matrix(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut best = 0.0_f64;
            for z in 0..n {
                best = best.max((gram[(z, i)] - gram[(z, j)]).abs());
            }
            d[(i, j)] = best;
            d[(j, i)] = best;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bw: f64) -> KernelSpec {
        KernelSpec::new(bw).unwrap()
    }

    #[test]
    fn rbf_identity_and_closed_form() {
        let s = spec(0.7);
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], &s).unwrap(), 1.0);
        // ‖x−y‖² = 2λ² gives e⁻¹
        let lam = 0.7_f64;
        let x = [0.0];
        let y = [(2.0 * lam * lam).sqrt()];
        let v = rbf_kernel(&x, &y, &s).unwrap();
        assert!((v - (-1.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rbf_grows_toward_one_with_bandwidth() {
        let x = [0.0, 0.0];
        let y = [3.0, 4.0];
        let mut last = 0.0;
        for bw in [0.5, 1.0, 2.0, 8.0, 64.0] {
            let v = rbf_kernel(&x, &y, &spec(bw)).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(last > 0.99);
    }

    #[test]
    fn rbf_rejects_dimension_mismatch() {
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], &spec(1.0)).is_err());
    }

    #[test]
    fn median_of_single_pair_is_the_distance() {
        let cloud = PointCloud::new(vec![vec![0.0], vec![3.0]]).unwrap();
        assert!((median_heuristic(&cloud, 100, 0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_line_points() {
        let cloud =
            PointCloud::new(vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        // pairwise distances {1, 1, 2, 2, 3, 4}: even count, middle pair (2, 2)
        assert!((median_heuristic(&cloud, 100, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_rejects_coincident_points() {
        let cloud = PointCloud::new(vec![vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(median_heuristic(&cloud, 100, 0).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let s = spec(1.0);
        let single = PointCloud::new(vec![vec![0.5]]).unwrap();
        let g = gram_matrix(&single, &s).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], 1.0);

        let dup = PointCloud::new(vec![vec![2.0], vec![2.0]]).unwrap();
        let g = gram_matrix(&dup, &s).unwrap();
        for v in g.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let pair = PointCloud::new(vec![vec![0.0], vec![2.0_f64.sqrt()]]).unwrap();
        let g = gram_matrix(&pair, &s).unwrap();
        assert!((g[(0, 1)] - (-1.0_f64).exp()).abs() < 1e-12);
        assert!((g[(0, 1)] - g[(1, 0)]).abs() == 0.0);
    }

    #[test]
    fn wce_zero_on_identical_weights() {
        let cloud = PointCloud::new(vec![vec![0.0], vec![1.0], vec![2.5]]).unwrap();
        let g = gram_matrix(&cloud, &spec(1.3)).unwrap();
        let a = [0.2, 0.5, 0.3];
        assert_eq!(wce_squared(&a, &a, &g).unwrap(), 0.0);
    }

    #[test]
    fn wce_two_deltas_closed_form() {
        let lam = 0.9_f64;
        let cloud =
            PointCloud::new(vec![vec![0.0], vec![(2.0 * lam * lam).sqrt()]]).unwrap();
        let g = gram_matrix(&cloud, &spec(lam)).unwrap();
        let v = wce_squared(&[1.0, 0.0], &[0.0, 1.0], &g).unwrap();
        let expected = 2.0 - 2.0 * (-1.0_f64).exp();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
    }

    #[test]
    fn sup_distance_two_point_cloud() {
        let cloud = PointCloud::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let s = spec(0.8);
        let k01 = rbf_kernel(&[0.0], &[1.0], &s).unwrap();
        let d = functional_sup_distance(0, 1, &cloud, &s).unwrap();
        assert!((d - (1.0 - k01)).abs() < 1e-12);
        assert_eq!(functional_sup_distance(0, 0, &cloud, &s).unwrap(), 0.0);
        let d_rev = functional_sup_distance(1, 0, &cloud, &s).unwrap();
        assert_eq!(d, d_rev);
    }

    #[test]
    fn quadrature_single_point_mass() {
        let cloud = PointCloud::new(vec![vec![1.0, 2.0]]).unwrap();
        let config = GrimConfig::uniform(1e-10, 1, 1, 1, 0);
        // Λ = 1: a single section to match, one node carries everything
        let (quad, _) = kernel_quadrature_grim(&cloud, &[1.0], &spec(1.0), &config).unwrap();
        assert_eq!(quad.node_indices, vec![0]);
        assert!((quad.weights[0] - 1.0).abs() < 1e-10);
        assert!(quad.wce_squared < 1e-12);
    }

    #[test]
    fn quadrature_collapses_duplicate_points() {
        let cloud = PointCloud::new(vec![vec![3.0], vec![3.0]]).unwrap();
        let config = GrimConfig::uniform(1e-10, 1, 1, 1, 0);
        let (quad, _) =
            kernel_quadrature_grim(&cloud, &[0.5, 0.5], &spec(1.0), &config).unwrap();
        assert_eq!(quad.node_indices.len(), 1);
        assert!((quad.weights[0] - 1.0).abs() < 1e-10);
        assert!(quad.wce_squared < 1e-12);
    }

    #[test]
    fn quadrature_rejects_bad_measures() {
        let cloud = PointCloud::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let config = GrimConfig::uniform(1e-10, 1, 1, 1, 0);
        assert!(kernel_quadrature_grim(&cloud, &[0.5, 0.0], &spec(1.0), &config).is_err());
        assert!(kernel_quadrature_grim(&cloud, &[0.9, 0.9], &spec(1.0), &config).is_err());
    }
}
