//! The score-field abstraction shared by the exact and empirical models.

use nalgebra::DVector;

use crate::error::Result;

/// An evaluable score `s(x, t) = grad log p_t(x)`.
///
/// Implementations are immutable and safe to share across threads; every
/// evaluation is a pure function of `(x, t)`.
pub trait ScoreField: Sync {
    /// Ambient dimension.
    fn dim(&self) -> usize;

    /// Evaluates the score at `x` and diffusion time `t > 0`.
    fn score(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>>;
}
