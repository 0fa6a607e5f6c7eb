//! Spectral geometry of diffusion score fields on linear manifolds.
//!
//! This crate reproduces, at desk scale, the spectral analysis of
//! variance-exploding diffusion on low-dimensional linear data: exact and
//! empirical (finite-dataset) score functions, random-matrix densities of
//! the score-Jacobian spectrum, spectral-gap dynamics, condensation
//! (memorization) times of the associated random energy model, and
//! SVD-based intrinsic-dimension estimation.
//!
//! Modules:
//! - [`manifold_data`]: random projection matrices, datasets, eigen-structure
//! - [`exact_score`]: closed-form score, `W_t` spectrum, gap formulas
//! - [`rmt_spectra`]: analytic spectral densities (Marchenko-Pastur and the
//!   two-variance replica solution)
//! - [`empirical_score`]: finite-`N` score, condensation times, participation
//!   ratios, memorized-Jacobian statistics
//! - [`dim_estimator`]: perturbation-SVD intrinsic-dimension estimation
//! - [`sde_sim`]: forward/backward variance-exploding integration

pub mod dim_estimator;
pub mod empirical_score;
pub mod error;
pub mod exact_score;
pub mod manifold_data;
pub mod rmt_spectra;
pub mod rng;
pub mod score;
pub mod sde_sim;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
pub use score::ScoreField;
