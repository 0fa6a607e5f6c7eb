//! Local intrinsic-dimension estimation from score fields.
//!
//! The estimator probes the score around a base point along `d`
//! orthogonalized Gaussian directions at scale `sqrt(t0)`, stacks the
//! finite-difference responses into a matrix, and reads the manifold
//! dimension off the sorted singular values: orthogonal directions respond
//! at the noise-dominated scale while tangent directions barely respond,
//! so the spectrum drops at index `d - m`. The drop is located by the
//! second-difference detector with a median threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_matrix, stream_rng};
use crate::score::ScoreField;
use crate::stats::mean_sem;

/// Finite-difference layout of the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Columns `(s(x0 + sqrt(t0) q_i) - s(x0)) / sqrt(t0)`.
    Forward,
    /// Columns `(s(x0 + sqrt(t0) q_i) - s(x0 - sqrt(t0) q_i)) / (2 sqrt(t0))`.
    CentralDifference,
}

/// Options for the singular-value estimator.
#[derive(Debug, Clone, Copy)]
pub struct SvOptions {
    /// Leading singular values ignored by the gap detector (0..=3). The
    /// largest value tends to be unstable on trained models; the default
    /// discards one.
    pub discarded_leading: usize,
}

impl Default for SvOptions {
    fn default() -> Self {
        Self {
            discarded_leading: 1,
        }
    }
}

/// Sorted singular values of the probe matrix at one `(x0, t0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SVEstimate {
    /// Non-increasing, normalized by the largest value.
    pub singular_values: Vec<f64>,
    /// Non-increasing, unnormalized.
    pub raw_values: Vec<f64>,
    /// Leading values the detector skips.
    pub discarded_leading: usize,
    /// Base point of the probe.
    pub x0: Vec<f64>,
    /// Sampling time of the probe.
    pub t0: f64,
}

impl SVEstimate {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }
}

/// How a dimension estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detection {
    /// A second-difference spike was found at `gap_index` (1-based position
    /// in the sorted spectrum); `dimension = d - gap_index`.
    SecondDerivative { gap_index: usize, dimension: usize },
    /// No index passed the threshold.
    NoneDetected,
}

/// Result of the gap detector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub method: Detection,
    pub threshold_factor: f64,
}

impl DimensionEstimate {
    pub fn dimension(&self) -> Option<usize> {
        match self.method {
            Detection::SecondDerivative { dimension, .. } => Some(dimension),
            Detection::NoneDetected => None,
        }
    }

    pub fn gap_index(&self) -> Option<usize> {
        match self.method {
            Detection::SecondDerivative { gap_index, .. } => Some(gap_index),
            Detection::NoneDetected => None,
        }
    }
}

/// Estimates singular values with the default options.
pub fn estimate_singular_values<S: ScoreField + ?Sized>(
    score: &S,
    x0: &DVector<f64>,
    t0: f64,
    variant: Variant,
    seed: u64,
) -> Result<SVEstimate> {
    estimate_singular_values_opts(score, x0, t0, variant, seed, &SvOptions::default())
}

/// Estimates singular values of the score response around `x0` at scale
/// `sqrt(t0)`. Deterministic in `seed`; for a linear score field the result
/// is independent of the seed because the orthogonalized probe spans the
/// whole space.
pub fn estimate_singular_values_opts<S: ScoreField + ?Sized>(
    score: &S,
    x0: &DVector<f64>,
    t0: f64,
    variant: Variant,
    seed: u64,
    opts: &SvOptions,
) -> Result<SVEstimate> {
    let d = score.dim();
    if d < 2 {
        return Err(Error::Dimension(format!("need d >= 2, got {d}")));
    }
    if t0 <= 0.0 || !t0.is_finite() {
        return Err(Error::Time(t0));
    }
    if x0.len() != d {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {d}",
            x0.len()
        )));
    }
    if opts.discarded_leading > 3 {
        return Err(Error::Domain(format!(
            "discarded_leading = {} out of range 0..=3",
            opts.discarded_leading
        )));
    }
    let q = orthogonal_probe(d, seed)?;
    let sqrt_t = t0.sqrt();
    let mut response = DMatrix::zeros(d, d);
    match variant {
        Variant::Forward => {
            let s0 = score.score(x0, t0)?;
            for i in 0..d {
                let xp = x0 + q.column(i) * sqrt_t;
                let sp = score.score(&xp, t0)?;
                response.set_column(i, &((sp - &s0) / sqrt_t));
            }
        }
        Variant::CentralDifference => {
            for i in 0..d {
                let xp = x0 + q.column(i) * sqrt_t;
                let xm = x0 - q.column(i) * sqrt_t;
                let sp = score.score(&xp, t0)?;
                let sm = score.score(&xm, t0)?;
                response.set_column(i, &((sp - sm) / (2.0 * sqrt_t)));
            }
        }
    }
    let mut raw: Vec<f64> = response.svd(false, false).singular_values.iter().cloned().collect();
    raw.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let max = raw[0];
    if max <= 0.0 {
        return Err(Error::Degenerate("score response is identically zero".into()));
    }
    let normalized = raw.iter().map(|v| v / max).collect();
    Ok(SVEstimate {
        singular_values: normalized,
        raw_values: raw,
        discarded_leading: opts.discarded_leading,
        x0: x0.iter().cloned().collect(),
        t0,
    })
}

/// Draws `d` Gaussian directions and orthogonalizes them by QR; resamples
/// from a fresh stream if the draw is numerically rank deficient.
fn orthogonal_probe(d: usize, seed: u64) -> Result<DMatrix<f64>> {
    for attempt in 0..8u64 {
        let g = normal_matrix(d, d, &mut stream_rng(seed, 3 + attempt));
        let qr = g.qr();
        let r_diag: Vec<f64> = (0..d).map(|i| qr.r()[(i, i)].abs()).collect();
        let r_max = r_diag.iter().cloned().fold(0.0, f64::max);
        if r_diag.iter().any(|&v| v < 1e-12 * r_max) {
            continue;
        }
        let q = qr.q();
        let gram = q.tr_mul(&q);
        let dev = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if dev < 1e-10 {
            return Ok(q);
        }
    }
    Err(Error::Degenerate(
        "could not orthogonalize the perturbation set".into(),
    ))
}

/// Floor for the second-difference median, guarding flat spectra.
const MEDIAN_GUARD: f64 = 1e-12;

/// Positions (1-based, in the sorted spectrum) whose absolute second
/// difference exceeds `threshold_factor` times the median, scanning from
/// the largest values; the first `discarded_leading` values are skipped.
fn threshold_crossings(est: &SVEstimate, threshold_factor: f64) -> Result<Vec<usize>> {
    let d = est.len();
    if d < 4 {
        return Err(Error::Dimension(format!(
            "need at least 4 singular values, got {d}"
        )));
    }
    if threshold_factor <= 0.0 {
        return Err(Error::Domain(format!(
            "threshold_factor = {threshold_factor} must be > 0"
        )));
    }
    let v = &est.singular_values;
    let skip = est.discarded_leading;
    // Second differences at interior positions k (1-based), using only
    // values beyond the discarded block.
    let first_k = skip + 2;
    let last_k = d - 1;
    if first_k > last_k {
        return Err(Error::Dimension(
            "too few values after discarding the leading block".into(),
        ));
    }
    let mut abs_second: Vec<(usize, f64)> = Vec::with_capacity(last_k - first_k + 1);
    for k in first_k..=last_k {
        let dd = v[k] - 2.0 * v[k - 1] + v[k - 2];
        abs_second.push((k, dd.abs()));
    }
    let mut sorted: Vec<f64> = abs_second.iter().map(|&(_, a)| a).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2].max(MEDIAN_GUARD);
    Ok(abs_second
        .iter()
        .filter(|&&(_, a)| a > threshold_factor * median)
        .map(|&(k, _)| k)
        .collect())
}

/// Detects the outermost spectral drop: the first position (scanning from
/// the largest singular values) whose absolute second difference exceeds
/// `threshold_factor` times the median; the detected dimension is
/// `d - gap_index`.
pub fn detect_dimension(est: &SVEstimate, threshold_factor: f64) -> Result<DimensionEstimate> {
    let crossings = threshold_crossings(est, threshold_factor)?;
    let method = match crossings.first() {
        Some(&k) => Detection::SecondDerivative {
            gap_index: k,
            dimension: est.len() - k,
        },
        None => Detection::NoneDetected,
    };
    Ok(DimensionEstimate {
        method,
        threshold_factor,
    })
}

/// All threshold crossings, outermost first, as `(gap_index, d - gap_index)`
/// pairs; intermediate gaps show up after the full-manifold one.
pub fn detect_all_gaps(
    est: &SVEstimate,
    threshold_factor: f64,
) -> Result<Vec<(usize, usize)>> {
    Ok(threshold_crossings(est, threshold_factor)?
        .into_iter()
        .map(|k| (k, est.len() - k))
        .collect())
}

/// One row of a dimension-over-time sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    /// Mean detected dimension over the repeats that detected a gap
    /// (NaN when none did).
    pub dim_mean: f64,
    /// Standard error of the mean over detecting repeats.
    pub dim_sem: f64,
    /// How many repeats detected a gap.
    pub detected: usize,
    pub repeats: usize,
}

/// Runs the estimator/detector pair over a list of times with independent
/// noise streams per repeat.
pub fn dimension_vs_time_sweep<S: ScoreField + ?Sized>(
    score: &S,
    x0: &DVector<f64>,
    times: &[f64],
    variant: Variant,
    threshold_factor: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(Error::Domain("repeats must be >= 1".into()));
    }
    if times.is_empty() {
        return Err(Error::Domain("empty time list".into()));
    }
    let mut rows = Vec::with_capacity(times.len());
    for (ti, &t) in times.iter().enumerate() {
        let mut dims = Vec::new();
        for rep in 0..repeats {
            let rep_seed = derive_seed(seed, (ti * repeats + rep) as u64);
            let est = estimate_singular_values(score, x0, t, variant, rep_seed)?;
            if let Some(dim) = detect_dimension(&est, threshold_factor)?.dimension() {
                dims.push(dim as f64);
            }
        }
        let (dim_mean, dim_sem) = if dims.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_sem(&dims)
        };
        rows.push(SweepRow {
            t,
            dim_mean,
            dim_sem,
            detected: dims.len(),
            repeats,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_score::ExactScoreField;
    use crate::manifold_data::{sample_projection, VarianceProfile};
    use crate::rng::normal_vector;

    fn exact_setup(
        d: usize,
        m: usize,
        profile: &VarianceProfile,
        seed: u64,
    ) -> crate::manifold_data::LinearManifoldModel {
        sample_projection(d, m, profile, seed).unwrap()
    }

    #[test]
    fn linear_field_recovers_wt_magnitudes() {
        let model = exact_setup(40, 16, &VarianceProfile::Single(1.0), 3);
        let field = ExactScoreField::new(&model);
        let t0 = 0.05;
        let x0 = normal_vector(40, &mut crate::rng::stream_rng(8, 0));
        let est =
            estimate_singular_values(&field, &x0, t0, Variant::Forward, 17).unwrap();
        let expected = field.jacobian_eigenvalues(t0).unwrap().sorted_magnitudes();
        let max = expected[0];
        for (got, want) in est.singular_values.iter().zip(expected.iter()) {
            assert!(
                (got - want / max).abs() < 1e-8,
                "normalized value {got} vs {}",
                want / max
            );
        }
    }

    #[test]
    fn linear_field_estimate_is_seed_invariant() {
        let model = exact_setup(30, 12, &VarianceProfile::Single(1.0), 5);
        let field = ExactScoreField::new(&model);
        let x0 = normal_vector(30, &mut crate::rng::stream_rng(2, 0));
        let a = estimate_singular_values(&field, &x0, 0.01, Variant::Forward, 1).unwrap();
        let b = estimate_singular_values(&field, &x0, 0.01, Variant::Forward, 999).unwrap();
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn central_difference_agrees_on_linear_fields() {
        let model = exact_setup(25, 10, &VarianceProfile::Single(1.0), 7);
        let field = ExactScoreField::new(&model);
        let x0 = normal_vector(25, &mut crate::rng::stream_rng(4, 0));
        let f = estimate_singular_values(&field, &x0, 0.02, Variant::Forward, 11).unwrap();
        let c =
            estimate_singular_values(&field, &x0, 0.02, Variant::CentralDifference, 11).unwrap();
        for (x, y) in f.singular_values.iter().zip(&c.singular_values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sharp_spectrum_splits_at_latent_dimension() {
        let model = exact_setup(100, 40, &VarianceProfile::Single(1.0), 19);
        let field = ExactScoreField::new(&model);
        let x0 = DVector::zeros(100);
        let est =
            estimate_singular_values(&field, &x0, 1e-3, Variant::Forward, 23).unwrap();
        let ones = est
            .singular_values
            .iter()
            .filter(|&&v| (v - 1.0).abs() < 1e-3)
            .count();
        assert_eq!(ones, 60);
        let small = est.singular_values.iter().filter(|&&v| v < 0.01).count();
        assert_eq!(small, 40);
    }

    #[test]
    fn detector_finds_dimension_forty() {
        let model = exact_setup(100, 40, &VarianceProfile::Single(1.0), 19);
        let field = ExactScoreField::new(&model);
        let x0 = DVector::zeros(100);
        let est =
            estimate_singular_values(&field, &x0, 1e-3, Variant::Forward, 29).unwrap();
        let det = detect_dimension(&est, 5.0).unwrap();
        assert_eq!(det.dimension(), Some(40));
        assert_eq!(det.gap_index(), Some(60));
    }

    #[test]
    fn detector_scale_invariance() {
        let model = exact_setup(60, 24, &VarianceProfile::Single(1.0), 31);
        let field = ExactScoreField::new(&model);
        let x0 = DVector::zeros(60);
        let mut est =
            estimate_singular_values(&field, &x0, 1e-3, Variant::Forward, 37).unwrap();
        let before = detect_dimension(&est, 5.0).unwrap();
        for v in est.raw_values.iter_mut() {
            *v *= 371.0;
        }
        let after = detect_dimension(&est, 5.0).unwrap();
        assert_eq!(before.dimension(), after.dimension());
    }

    #[test]
    fn flat_spectrum_detects_nothing() {
        let est = SVEstimate {
            singular_values: vec![1.0; 32],
            raw_values: vec![2.5; 32],
            discarded_leading: 1,
            x0: vec![0.0; 32],
            t0: 0.1,
        };
        let det = detect_dimension(&est, 5.0).unwrap();
        assert_eq!(det.method, Detection::NoneDetected);
        assert_eq!(det.dimension(), None);
    }

    #[test]
    fn detector_needs_enough_values() {
        let est = SVEstimate {
            singular_values: vec![1.0, 0.9, 0.1],
            raw_values: vec![1.0, 0.9, 0.1],
            discarded_leading: 1,
            x0: vec![0.0; 3],
            t0: 0.1,
        };
        assert!(detect_dimension(&est, 5.0).is_err());
    }

    #[test]
    fn two_block_profile_shows_intermediate_gap_at_t_max() {
        // 10 high-variance and 30 low-variance latent directions.
        let profile = VarianceProfile::TwoBlock {
            sigma1_sq: 1.0,
            sigma2_sq: 0.01,
            fraction: 0.25,
        };
        let model = exact_setup(100, 40, &profile, 41);
        let field = ExactScoreField::new(&model);
        let params =
            crate::rmt_spectra::TwoVarianceParams::new(1.0, 0.01, 0.25, 0.4).unwrap();
        let (hi, lo) = crate::rmt_spectra::mixture_approx_edges(&params);
        let t_max = (hi * lo).sqrt();
        let x0 = DVector::zeros(100);
        let est =
            estimate_singular_values(&field, &x0, t_max, Variant::Forward, 43).unwrap();
        let gaps = detect_all_gaps(&est, 5.0).unwrap();
        // The intermediate drop separates the 10-dimensional high-variance
        // block: a crossing at position 90.
        assert!(
            gaps.iter().any(|&(k, dim)| k == 90 && dim == 10),
            "gaps detected: {gaps:?}"
        );
    }

    #[test]
    fn sweep_dimension_grows_as_time_falls() {
        let model = exact_setup(100, 40, &VarianceProfile::Single(1.0), 47);
        let field = ExactScoreField::new(&model);
        let x0 = DVector::zeros(100);
        let times = [10.0, 1.0, 0.1, 0.01, 1e-3];
        let rows =
            dimension_vs_time_sweep(&field, &x0, &times, Variant::Forward, 5.0, 3, 53).unwrap();
        assert_eq!(rows.len(), times.len());
        // Detected dimension is non-decreasing as t decreases.
        let dims: Vec<f64> = rows
            .iter()
            .map(|r| if r.detected > 0 { r.dim_mean } else { 0.0 })
            .collect();
        for w in dims.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "dims not monotone: {dims:?}");
        }
        // By t = 1e-3 the full manifold dimension is resolved.
        assert_eq!(dims[4], 40.0);
    }

    #[test]
    fn sweep_validates_arguments() {
        let model = exact_setup(10, 4, &VarianceProfile::Single(1.0), 3);
        let field = ExactScoreField::new(&model);
        let x0 = DVector::zeros(10);
        assert!(
            dimension_vs_time_sweep(&field, &x0, &[1.0], Variant::Forward, 5.0, 0, 1).is_err()
        );
        assert!(dimension_vs_time_sweep(&field, &x0, &[], Variant::Forward, 5.0, 1, 1).is_err());
    }
}
