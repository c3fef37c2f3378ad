//! Sparse approximation of large linear feature expansions.
//!
//! Given a target `φ = Σ aᵢ·fᵢ` built from `N` features and a finite data set
//! `Σ` of `Λ` linear functionals, this crate finds a short expansion `u` over
//! a data-selected subset of the features such that `|σ(φ − u)|` stays below
//! a chosen threshold for every `σ ∈ Σ`. The engine is a greedy loop that
//! alternates worst-residual selection of functionals with support reduction
//! by recombination: kernel-space elimination on the induced linear system,
//! which preserves non-negativity and the total coefficient mass.
//!
//! The [`kernel`] and [`problems`] modules instantiate the framework for
//! kernel quadrature on point clouds, moment-preserving cubature, and a
//! self-generating `L²` benchmark; [`geim`] provides a greedy interpolation
//! baseline, and [`diagnostics`] estimates the packing-number quantities that
//! bound the number of greedy steps.
//!
//! ```
//! use grim::{run_grim, GrimConfig, ProblemInstance};
//! use nalgebra::{DMatrix, DVector};
//!
//! // Two functionals, three features, target φ = f0 + f1 + f2.
//! let evals = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
//! let instance = ProblemInstance::new(evals, DVector::from_element(3, 1.0), None).unwrap();
//! let config = GrimConfig::uniform(1e-6, 2, 1, 1, 7);
//! let result = run_grim(&instance, &config).unwrap();
//! assert!(result.achieved_sup <= 1e-6);
//! assert!(result.support.len() <= 3);
//! ```

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod geim;
pub mod grim;
pub mod kernel;
pub mod problems;
pub mod recombination;
pub mod report;

pub use error::{Error, Result};
pub use geim::{geim_fit, geim_interpolate, GeimState, GramNorm, NormOracle, SampledNorm};
pub use grim::{
    normalize_instance, run_grim, GrimConfig, GrimResult, GrimTrace, NormalizedInstance,
    ProblemInstance, StepRecord,
};
pub use kernel::{
    gram_matrix, kernel_quadrature_grim, median_heuristic, rbf_kernel, wce_squared, KernelSpec,
    PointCloud, QuadratureResult,
};
pub use recombination::{
    eliminate_direction, recombination_thin, recombine_basic, recombine_tree, svd_kernel_basis,
    ReducedSolution, ReductionSystem, ThinExpansion,
};

#[cfg(doctest)]
mod book;
