//! Path-integral QMC escape dynamics and instanton theory for fully
//! connected transverse-field spin models.
//!
//! Modules, bottom up:
//! - [`model`]: cost functions, parameters, spin paths, classical QMC energy.
//! - [`exact`]: exact diagonalisation and exhaustive partition sums.
//! - [`meanfield`]: discrete transfer-matrix free energy and its saddles.
//! - [`instanton`]: continuous-time open-boundary instanton solver.
//! - [`coherent`]: spin-coherent-state trajectories and actions.
//! - [`qmc`]: Metropolis engine and first-passage experiments.

pub mod coherent;
pub mod exact;
pub mod instanton;
pub mod meanfield;
pub mod model;
pub mod numerics;
pub mod qmc;

pub use model::{Boundary, CostFunction, ModelSpec, QmcParams, SpinPath};

/// Library error type. Variants are grouped by the CLI into exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("size cap exceeded: {0}")]
    Cap(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
}

impl Error {
    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parameter(_) | Error::Dimension(_) | Error::Cap(_) => ErrorCategory::Config,
            Error::Numerical(_) | Error::Convergence(_) | Error::NoSolution(_) => ErrorCategory::Numerical,
            Error::Budget(_) => ErrorCategory::Budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Budget,
}
