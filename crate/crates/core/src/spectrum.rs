//! Spectrum containers shared across the analytic and empirical paths.

use serde::{Deserialize, Serialize};

/// Where a spectrum came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Evaluated from a closed-form density in the thermodynamic limit.
    AnalyticDensity,
    /// Eigen- or singular values of an explicitly constructed finite matrix.
    FiniteMatrix,
    /// Estimated from score evaluations (perturbation SVD).
    EstimatedFromScore,
}

/// An ordered set of eigen- or singular values together with its origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Values sorted ascending (most negative first for Jacobian spectra).
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl SpectrumResult {
    /// Builds a result, sorting the values ascending.
    pub fn new(mut values: Vec<f64>, provenance: Provenance) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).expect("non-finite spectrum value"));
        Self { values, provenance }
    }

    /// Magnitudes sorted descending, the ordering used in dimensionality plots.
    pub fn sorted_magnitudes(&self) -> Vec<f64> {
        let mut mags: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        mags
    }
}
