//! Classical emulation toolkit for two early fault-tolerant eigenenergy
//! algorithms that share a single quantum observable, the Chebyshev moments
//! `<T_k(H)>` of a shifted and normalized Hamiltonian:
//!
//! * Chebyshev-moment Krylov subspace diagonalization (`qksd`), and
//! * statistical phase estimation from an approximate cumulative
//!   distribution function (`spe`).
//!
//! The quantum device is replaced by a spectral model (`spectrum`): a list of
//! normalized eigenvalues with initial-state weights, from which all moments
//! are evaluated exactly and then corrupted with shot noise. Hamiltonian
//! one-norms and shifts for several block-encoding representations are
//! computed in `hamrep`. Low-level kernels live in `numerics`.

pub mod hamrep;
pub mod numerics;
pub mod qksd;
pub mod spe;
pub mod spectrum;

/// Error type shared by every module of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller violated a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),
    /// Input data failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// A text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// A numerical procedure failed (no retained subspace, no convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A bounded search exhausted its budget without meeting the target.
    #[error("bounded search failed: {0}")]
    BoundedSearch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
