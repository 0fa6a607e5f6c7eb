//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, score evaluation and the
/// spectral solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions do not match or are out of range.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A variance profile failed validation.
    #[error("invalid variance profile: {0}")]
    Profile(String),

    /// A diffusion time was non-positive where a positive time is required.
    #[error("invalid time {0}: must be > 0")]
    Time(f64),

    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Root bracketing failed: no sign change inside the search interval.
    #[error("bracketing failed: {0}")]
    Bracket(String),

    /// A random construction degenerated (e.g. rank-deficient probe set).
    #[error("degenerate construction: {0}")]
    Degenerate(String),

    /// A numerical state became non-finite.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
