//! Subspace estimation for heteroscedastic probabilistic PCA with the
//! generalized power method (GPM).
//!
//! Samples arrive in groups with known noise variances. The maximum-likelihood
//! subspace maximizes `Σ_k x_kᵀ M_k x_k` over matrices with orthonormal
//! columns, and GPM climbs it by repeatedly applying `X ↦ αX + [M_k x_k]_k`
//! and projecting back onto the Stiefel manifold.
//!
//! ```
//! use gpm_hppca::experiment::{ExperimentSpec, solve_spec};
//! use gpm_hppca::manifold::dist_f;
//! use gpm_hppca::solver::pca_init;
//!
//! let spec = ExperimentSpec { d: 30, sizes: vec![300, 1200], ..Default::default() };
//! let bundle = spec.generate(0)?;
//! let (inst, res) = solve_spec(&spec, &bundle)?;
//! let q = inst.population.q_truth();
//! let pca = pca_init(&inst.covariance, spec.k)?.point;
//! assert!(dist_f(&res.x_final, q) < dist_f(&pca, q));
//! assert!(dist_f(&res.x_final, q) < 0.5);
//! # Ok::<(), gpm_hppca::Error>(())
//! ```

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifold;
pub mod model;
pub mod numerics;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
pub use manifold::{SignVector, StiefelPoint};
pub use model::{GroupedDataset, NoiseGroups, NoiseKind, SignalModel};
pub use numerics::{DenseMatrix, RngStream};
pub use problem::{GpmObjective, HppcaProblem, PopulationProblem, ResidualSet, WeightTable};
pub use solver::{gpm_solve, IterationRecord, SolveResult, SolverConfig, Termination};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/gpm.md")]
    mod gpm {}
    #[doc = include_str!("../../../book/src/initialization.md")]
    mod initialization {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
