//! Per-block convex solvers: a self-contained QCQP engine and the three
//! block assemblies (beamformers, power splitting, amplification) that feed
//! it.

pub mod alpha;
pub mod beamforming;
pub mod beta;
pub(crate) mod couplings;
pub mod qcqp;

use crate::mm::MmError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("constraint {index:?} is not positive semidefinite (eigenvalue {min_eig:.3e})")]
    NotPsd { index: Option<usize>, min_eig: f64 },
    #[error("box bounds are only supported on real-valued problems")]
    BoxOnComplex,
    #[error("lower bound exceeds upper bound at coordinate {0}")]
    BadBounds(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("budget term is negative: {0}")]
    NegativeBudget(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mm(#[from] MmError),
}
