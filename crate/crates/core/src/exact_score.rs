//! Closed-form score of the infinite-data linear model and its gap formulas.
//!
//! For the linear model the noised density is the Gaussian
//! `p_t = N(0, F F^T + t I)` and the score is linear in `x`:
//! `s(x, t) = (1/t) W_t x`. The dimensionless Jacobian factor `W_t` shares
//! eigenvectors with `F F^T`; an eigenvalue `gamma` of `F F^T` maps to
//!
//! `r = -t / (t + gamma)`,
//!
//! so orthogonal directions (`gamma = 0`) sit at exactly `-1` and tangent
//! directions fill `(-1, 0)`. All spectra reported by this module are of the
//! dimensionless `W_t` (values in `[-1, 0]`); the raw score Jacobian is
//! `W_t / t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold_data::{LinearManifoldModel, RANK_RTOL};
use crate::score::ScoreField;
use crate::spectrum::{Provenance, SpectrumResult};

/// Maps an eigenvalue of `F F^T` to the matching eigenvalue of `W_t`.
pub fn wt_eigenvalue(gamma: f64, t: f64) -> f64 {
    -t / (t + gamma)
}

/// Marchenko-Pastur support edges of the nonzero eigenvalues of `F F^T`:
/// `sigma^2 (1 -+ alpha_m^{-1/2})^2`. Returns `(gamma_minus, gamma_plus)`.
pub fn mp_gamma_edges(sigma_sq: f64, alpha_m: f64) -> (f64, f64) {
    let s = 1.0 / alpha_m.sqrt();
    (
        sigma_sq * (1.0 - s) * (1.0 - s),
        sigma_sq * (1.0 + s) * (1.0 + s),
    )
}

/// Score field of the exact linear model, held in spectral form.
///
/// Evaluation costs `O(d m)`: only the `m` tangent eigenvectors are stored
/// densely, the orthogonal block acts as `-x`.
#[derive(Debug, Clone)]
pub struct ExactScoreField<'a> {
    model: &'a LinearManifoldModel,
    /// Eigenvectors with `gamma > 0`, as columns (`d x n_tangent`).
    tangent_basis: DMatrix<f64>,
    /// Matching eigenvalues of `F F^T`.
    tangent_gammas: Vec<f64>,
}

impl<'a> ExactScoreField<'a> {
    pub fn new(model: &'a LinearManifoldModel) -> Self {
        let tangent: Vec<usize> = (0..model.d)
            .filter(|&j| model.gammas()[j] > 0.0)
            .collect();
        let tangent_basis = DMatrix::from_fn(model.d, tangent.len(), |i, k| {
            model.eigen.eigenvectors[(i, tangent[k])]
        });
        let tangent_gammas = tangent.iter().map(|&j| model.gammas()[j]).collect();
        Self {
            model,
            tangent_basis,
            tangent_gammas,
        }
    }

    pub fn model(&self) -> &LinearManifoldModel {
        self.model
    }

    fn check_input(&self, x: &DVector<f64>, t: f64) -> Result<()> {
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::Time(t));
        }
        if x.len() != self.model.d {
            return Err(Error::Dimension(format!(
                "x has length {}, expected {}",
                x.len(),
                self.model.d
            )));
        }
        Ok(())
    }

    /// Applies the dimensionless `W_t` to `x`.
    pub fn apply_wt(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_input(x, t)?;
        // W_t x = sum_tangent (r_j + 1) v_j <v_j, x> - x
        let coords = self.tangent_basis.tr_mul(x);
        let scaled = DVector::from_fn(coords.len(), |j, _| {
            (wt_eigenvalue(self.tangent_gammas[j], t) + 1.0) * coords[j]
        });
        Ok(&self.tangent_basis * scaled - x)
    }

    /// Eigenvalues of the dimensionless `W_t`, all `d` of them.
    pub fn jacobian_eigenvalues(&self, t: f64) -> Result<SpectrumResult> {
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::Time(t));
        }
        let values = self
            .model
            .gammas()
            .iter()
            .map(|&g| wt_eigenvalue(g, t))
            .collect();
        Ok(SpectrumResult::new(values, Provenance::FiniteMatrix))
    }

    /// Small-t asymptotic score `(1/t)(Pi - I) x` with `Pi` the orthogonal
    /// projector onto `col(F)`. Requires full column rank.
    pub fn consolidation_score(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_input(x, t)?;
        if self.model.eigen.rank() < self.model.m {
            return Err(Error::Degenerate(format!(
                "projection matrix is rank deficient: rank {} < m = {} \
                 (threshold {RANK_RTOL} relative)",
                self.model.eigen.rank(),
                self.model.m
            )));
        }
        let coords = self.tangent_basis.tr_mul(x);
        let projected = &self.tangent_basis * coords;
        Ok((projected - x) / t)
    }

    /// Orthogonal projector `Pi = F (F^T F)^{-1} F^T` as a dense matrix.
    pub fn manifold_projector(&self) -> DMatrix<f64> {
        &self.tangent_basis * self.tangent_basis.transpose()
    }
}

impl ScoreField for ExactScoreField<'_> {
    fn dim(&self) -> usize {
        self.model.d
    }

    fn score(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.apply_wt(x, t)? / t)
    }
}

/// Which spectral gap a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapKind {
    /// Between the orthogonal atom at `|r| = 1` and the tangent bulk.
    Final,
    /// Between tangent bulks of different variance, counted from the
    /// high-variance side.
    Intermediate(usize),
}

/// Characteristic times attached to a gap, where applicable.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CharacteristicTimes {
    /// Time at which the final gap reaches the reference width.
    pub t_onset: Option<f64>,
    /// Opening time of an intermediate gap at the reference width.
    pub t_in: Option<f64>,
    /// Closing time of an intermediate gap at the reference width.
    pub t_fin: Option<f64>,
    /// Time of maximal intermediate-gap width.
    pub t_max: Option<f64>,
}

/// A spectral-gap width at one diffusion time plus its characteristic times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_width: f64,
    pub gap_kind: GapKind,
    pub t: f64,
    pub characteristic_times: CharacteristicTimes,
}

/// Width of the final gap for a single-variance profile:
/// `Delta = gamma_plus / (t + gamma_plus)` with
/// `gamma_plus = sigma^2 (1 + alpha_m^{-1/2})^2`.
///
/// `delta_ref` sets the reference width for the reported onset time
/// `t_onset = gamma_plus (1 - delta_ref) / delta_ref`.
pub fn final_gap(sigma_sq: f64, alpha_m: f64, t: f64, delta_ref: f64) -> Result<GapReport> {
    if alpha_m <= 0.0 || alpha_m > 1.0 {
        return Err(Error::Domain(format!(
            "alpha_m = {alpha_m} must lie in (0, 1]"
        )));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    if sigma_sq <= 0.0 {
        return Err(Error::Domain(format!("sigma^2 = {sigma_sq} must be > 0")));
    }
    let (_, gamma_plus) = mp_gamma_edges(sigma_sq, alpha_m);
    Ok(GapReport {
        gap_width: gamma_plus / (t + gamma_plus),
        gap_kind: GapKind::Final,
        t,
        characteristic_times: CharacteristicTimes {
            t_onset: Some(final_gap_onset_time(sigma_sq, alpha_m, delta_ref)?),
            ..Default::default()
        },
    })
}

/// Time at which the final gap reaches width `delta`.
pub fn final_gap_onset_time(sigma_sq: f64, alpha_m: f64, delta: f64) -> Result<f64> {
    if !(0.0 < delta && delta <= 1.0) {
        return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1]")));
    }
    let (_, gamma_plus) = mp_gamma_edges(sigma_sq, alpha_m);
    Ok(gamma_plus * (1.0 - delta) / delta)
}

/// Width of the intermediate gap between two separated bulks of the
/// `F F^T` spectrum:
/// `Delta(t) = t/(t + gamma_minus_lo) - t/(t + gamma_plus_hi)`,
/// where `gamma_plus_hi` is the lower edge of the high-variance bulk and
/// `gamma_minus_lo` the upper edge of the low-variance bulk.
///
/// The report carries `t_max = sqrt(gamma_plus_hi * gamma_minus_lo)` and the
/// opening/closing times at the reference width `delta_ref`:
/// `t_in = gamma_plus_hi / delta_ref`, `t_fin = delta_ref * gamma_minus_lo`.
pub fn intermediate_gap(
    gamma_plus_hi: f64,
    gamma_minus_lo: f64,
    t: f64,
    delta_ref: f64,
) -> Result<GapReport> {
    if !(0.0 < gamma_minus_lo && gamma_minus_lo < gamma_plus_hi) {
        return Err(Error::Domain(format!(
            "edges out of order: need 0 < gamma_minus_lo < gamma_plus_hi, \
             got {gamma_minus_lo} and {gamma_plus_hi}"
        )));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    if !(0.0 < delta_ref && delta_ref <= 1.0) {
        return Err(Error::Domain(format!(
            "delta_ref = {delta_ref} must lie in (0, 1]"
        )));
    }
    Ok(GapReport {
        gap_width: intermediate_gap_width(gamma_plus_hi, gamma_minus_lo, t),
        gap_kind: GapKind::Intermediate(1),
        t,
        characteristic_times: CharacteristicTimes {
            t_in: Some(gamma_plus_hi / delta_ref),
            t_fin: Some(delta_ref * gamma_minus_lo),
            t_max: Some((gamma_plus_hi * gamma_minus_lo).sqrt()),
            ..Default::default()
        },
    })
}

/// The bare intermediate-gap width at time `t`.
pub fn intermediate_gap_width(gamma_plus_hi: f64, gamma_minus_lo: f64, t: f64) -> f64 {
    t / (t + gamma_minus_lo) - t / (t + gamma_plus_hi)
}
