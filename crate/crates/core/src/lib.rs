//! Robust nonnegative matrix factorization driven by the entropy of
//! per-sample residues, with an optional graph-regularized variant.

pub mod data;
pub mod error;
pub mod eval;
pub mod factor;
pub mod graph;
pub mod kmeans;
pub mod losses;
pub mod numeric;
pub mod solvers;

pub use error::{Error, Result};
pub use factor::{ConvergenceTrace, DataMatrix, FactorPair, ResidualWeights};
pub use solvers::{fit, fit_emmf, fit_from, fit_gemmf, FitResult, GraphRule, InitStrategy, Method, SolverConfig};
