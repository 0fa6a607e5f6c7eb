//! Finite-dataset score field and the condensation (memorization) analysis
//! of the associated positional random energy model.
//!
//! The empirical density at time `t` is an `N`-component isotropic Gaussian
//! mixture centered on the data points. Interpreting it as a partition
//! function with inverse temperature `beta = 1/t` and energies
//! `E_mu(x) = ||x - y^mu||^2 / 2` yields a REM whose condensation threshold
//! `t_c(x)` marks where the empirical score decouples from the exact one
//! and locks onto few training points.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold_data::Dataset;
use crate::rng::stream_rng;
use crate::score::ScoreField;

/// Score field of the empirical Gaussian mixture over a finite dataset.
#[derive(Debug, Clone)]
pub struct EmpiricalScoreField<'a> {
    dataset: &'a Dataset,
    /// Cached `||y^mu||^2`, reused across evaluations.
    sq_norms: Vec<f64>,
}

impl<'a> EmpiricalScoreField<'a> {
    pub fn new(dataset: &'a Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Dimension("empty dataset".into()));
        }
        let sq_norms = (0..dataset.len())
            .map(|mu| dataset.points.column(mu).norm_squared())
            .collect();
        Ok(Self { dataset, sq_norms })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    /// Log of the unnormalized mixture density `sum_mu exp(-||x-y^mu||^2/2t)`.
    pub fn log_density_unnormalized(&self, x: &DVector<f64>, t: f64) -> Result<f64> {
        let exponents = self.exponents(x, t)?;
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        Ok(max + sum.ln())
    }

    fn exponents(&self, x: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::Time(t));
        }
        if x.len() != self.dataset.dim() {
            return Err(Error::Dimension(format!(
                "x has length {}, expected {}",
                x.len(),
                self.dataset.dim()
            )));
        }
        let x_sq = x.norm_squared();
        // -||x - y||^2 / 2t expanded through the cached norms.
        Ok((0..self.dataset.len())
            .map(|mu| {
                let dot = self.dataset.points.column(mu).dot(x);
                (-0.5 * (x_sq + self.sq_norms[mu]) + dot) / t
            })
            .collect())
    }
}

impl ScoreField for EmpiricalScoreField<'_> {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// `s(x, t) = (sum_mu w_mu (y^mu - x)) / t` with softmax weights
    /// `w_mu` proportional to `exp(-||x - y^mu||^2 / 2t)`, log-sum-exp
    /// stabilized.
    fn score(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let exponents = self.exponents(x, t)?;
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let mut mean = DVector::zeros(self.dataset.dim());
        for (mu, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                mean.axpy(w, &self.dataset.points.column(mu), 1.0);
            }
        }
        Ok((mean - x) / t)
    }
}

/// Finite-difference Jacobian estimate probed at scale `sqrt(t)` along an
/// orthonormal basis, mapped back to ambient coordinates: for a linear score
/// this equals the true Jacobian exactly, for an empirical score it is the
/// resolution-limited estimate.
pub fn smoothed_jacobian<S: ScoreField + ?Sized>(
    score: &S,
    x: &DVector<f64>,
    t: f64,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(smoothed_jacobian_columns(score, x, t, basis)? * basis.transpose())
}

/// The raw probe matrix: column `j` is
/// `(s(x + sqrt(t) b_j, t) - s(x, t)) / sqrt(t)` for basis column `b_j`.
pub fn smoothed_jacobian_columns<S: ScoreField + ?Sized>(
    score: &S,
    x: &DVector<f64>,
    t: f64,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = score.dim();
    if basis.nrows() != d || basis.ncols() != d {
        return Err(Error::Dimension(format!(
            "basis is {}x{}, expected {d}x{d}",
            basis.nrows(),
            basis.ncols()
        )));
    }
    let gram = basis.tr_mul(basis);
    let dev = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if dev >= 1e-10 {
        return Err(Error::Domain(format!(
            "basis is not orthonormal: max |Q^T Q - I| = {dev:e}"
        )));
    }
    let sqrt_t = t.sqrt();
    let s0 = score.score(x, t)?;
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let xj = x + basis.column(j) * sqrt_t;
        let sj = score.score(&xj, t)?;
        out.set_column(j, &((sj - &s0) / sqrt_t));
    }
    Ok(out)
}

// --- positional REM ----------------------------------------------------------

/// Moment statistics of a variance vector at a position.
fn moment_stats(variances: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let d = variances.len() as f64;
    let r2 = variances.iter().sum::<f64>() / d;
    let r4 = variances.iter().map(|s| s * s).sum::<f64>() / d;
    let omega_sq = variances
        .iter()
        .zip(x)
        .map(|(&s, &xi)| xi * xi * s)
        .sum::<f64>()
        / d;
    (r2, r4, omega_sq)
}

/// Moment generating function of the REM energies and its derivative:
/// returns `(zeta(lambda), zeta'(lambda))`.
///
/// `zeta(lambda) = (1/d) sum_i [-log(1 + lambda sigma_i^2/t)/2
///                + (lambda^2/2t^2) x_i^2 sigma_i^2 / (1 + lambda sigma_i^2/t)]`.
pub fn zeta(lambda: f64, t: f64, variances: &[f64], x: &[f64]) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Err(Error::Time(t));
    }
    if variances.len() != x.len() {
        return Err(Error::Dimension(format!(
            "variances ({}) and position ({}) lengths differ",
            variances.len(),
            x.len()
        )));
    }
    let d = variances.len() as f64;
    let mut value = 0.0;
    let mut derivative = 0.0;
    for (&s2, &xi) in variances.iter().zip(x) {
        let denom = 1.0 + lambda * s2 / t;
        if denom <= 0.0 {
            return Err(Error::Domain(format!(
                "branch violation: 1 + lambda sigma^2/t = {denom} <= 0"
            )));
        }
        let x2s2 = xi * xi * s2;
        value += -0.5 * denom.ln() + lambda * lambda / (2.0 * t * t) * x2s2 / denom;
        derivative += -s2 / (2.0 * t * denom) + lambda / (t * t) * x2s2 / denom
            - lambda * lambda / (2.0 * t * t * t) * xi * xi * s2 * s2 / (denom * denom);
    }
    Ok((value / d, derivative / d))
}

/// How the condensation time is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TcMode {
    /// Root of `alpha + zeta(1) - zeta'(1) = 0` in `t`.
    Exact,
    /// Large-time expansion `t_c = sqrt((r4/2 + omega^2) / (2 alpha))`.
    Approximate,
}

/// Condensation threshold of the positional REM at one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondensationReport {
    /// Root-found condensation time (only with [`TcMode::Exact`]).
    pub t_c_exact: Option<f64>,
    /// Closed-form condensation time from the large-time expansion.
    pub t_c_approx: f64,
    /// Directional variance density `omega^2(x) = (1/d) sum x_i^2 sigma_i^2`.
    pub omega_sq: f64,
    /// `(1/d) sum sigma_i^2`.
    pub r2: f64,
    /// `(1/d) sum sigma_i^4`.
    pub r4: f64,
    /// Data-abundance exponent `log(N)/d`.
    pub alpha: f64,
    /// Participation ratio at the inverse temperature passed to
    /// [`CondensationReport::with_participation`].
    pub participation_y: Option<f64>,
    /// Effective number of contributing data points, `1/Y`.
    pub n_eff: Option<f64>,
}

impl CondensationReport {
    /// Best available condensation time (exact when computed).
    pub fn t_c(&self) -> f64 {
        self.t_c_exact.unwrap_or(self.t_c_approx)
    }

    /// Fills the participation ratio and effective data-point count at
    /// inverse temperature `beta`, when the point is condensed there.
    pub fn with_participation(mut self, beta: f64) -> Self {
        let beta_c = 1.0 / self.t_c();
        if let Ok((y, n_eff)) = participation(beta, beta_c) {
            self.participation_y = Some(y);
            self.n_eff = Some(n_eff);
        }
        self
    }
}

/// Condensation time of the positional REM with per-dimension variances
/// `sigma_i^2` at position `x`, for `alpha = log(N)/d`.
pub fn condensation_time(
    variances: &[f64],
    x: &[f64],
    alpha: f64,
    mode: TcMode,
) -> Result<CondensationReport> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("alpha = {alpha} must be > 0")));
    }
    if variances.iter().all(|&s| s <= 0.0) {
        return Err(Error::Domain(
            "at least one variance must be positive".into(),
        ));
    }
    if variances.len() != x.len() {
        return Err(Error::Dimension(format!(
            "variances ({}) and position ({}) lengths differ",
            variances.len(),
            x.len()
        )));
    }
    let (r2, r4, omega_sq) = moment_stats(variances, x);
    let t_c_approx = ((r4 / 2.0 + omega_sq) / (2.0 * alpha)).sqrt();
    let t_c_exact = match mode {
        TcMode::Approximate => None,
        TcMode::Exact => Some(exact_condensation_root(variances, x, alpha, t_c_approx)?),
    };
    Ok(CondensationReport {
        t_c_exact,
        t_c_approx,
        omega_sq,
        r2,
        r4,
        alpha,
        participation_y: None,
        n_eff: None,
    })
}

/// Solves `alpha + zeta(1; t) - zeta'(1; t) = 0` by geometric bracket
/// expansion from the approximate time followed by bisection.
fn exact_condensation_root(
    variances: &[f64],
    x: &[f64],
    alpha: f64,
    guess: f64,
) -> Result<f64> {
    const T_MIN: f64 = 1e-8;
    const T_MAX: f64 = 1e8;
    let h = |t: f64| -> Result<f64> {
        let (z, dz) = zeta(1.0, t, variances, x)?;
        Ok(alpha + z - dz)
    };
    // h < 0 at small t (condensed), h -> alpha > 0 at large t.
    let mut lo = guess.clamp(T_MIN, T_MAX);
    let mut hi = lo;
    while h(lo)? > 0.0 {
        lo /= 10.0;
        if lo < T_MIN {
            return Err(Error::Bracket(format!(
                "no sign change down to t = {T_MIN}; alpha = {alpha} too large \
                 for condensation in range"
            )));
        }
    }
    while h(hi)? < 0.0 {
        hi *= 10.0;
        if hi > T_MAX {
            return Err(Error::Bracket(format!(
                "no sign change up to t = {T_MAX}; alpha = {alpha} too small"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 1e-12 * mid {
            break;
        }
        if h(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mean participation ratio `Y = 1 - beta_c/beta` of the condensed phase and
/// the effective data-point count `N_eff = 1/Y = beta/(beta - beta_c)`.
///
/// Errors for `beta <= beta_c`: outside the condensed phase the number of
/// contributing points is exponential and `Y` vanishes.
pub fn participation(beta: f64, beta_c: f64) -> Result<(f64, f64)> {
    if beta_c <= 0.0 {
        return Err(Error::Domain(format!("beta_c = {beta_c} must be > 0")));
    }
    if beta <= beta_c {
        return Err(Error::Domain(format!(
            "beta = {beta} <= beta_c = {beta_c}: not in the condensed phase"
        )));
    }
    let y = 1.0 - beta_c / beta;
    Ok((y, 1.0 / y))
}

/// A draw of the memorization-phase Jacobian model.
#[derive(Debug, Clone)]
pub struct MemorizedJacobian {
    /// Sampled `d x d` matrix: diagonal means `-beta/(1 + beta sigma_i^2)`
    /// plus Gaussian fluctuations with the position-dependent variance.
    pub matrix: DMatrix<f64>,
    /// Deterministic approximate singular values (negative, magnitude
    /// `sqrt(mean_i^2 + var_ii^2)`), one per dimension.
    pub approx_singular_values: Vec<f64>,
    pub beta: f64,
    /// Inverse condensation time at the origin.
    pub beta_c_origin: f64,
}

impl MemorizedJacobian {
    /// Magnitudes of the approximate singular values normalized by `beta`
    /// (the dimensionless convention), sorted descending is NOT applied.
    pub fn normalized_approx_magnitudes(&self) -> Vec<f64> {
        self.approx_singular_values
            .iter()
            .map(|s| s.abs() / self.beta)
            .collect()
    }

    /// Eigenvalues of `-sqrt(W^T W)/beta` from the sampled matrix: minus the
    /// singular values of `W`, normalized by `beta`, ascending.
    pub fn sampled_normalized_spectrum(&self) -> Vec<f64> {
        let mut svs: Vec<f64> = self
            .matrix
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .map(|s| -s / self.beta)
            .collect();
        svs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        svs
    }
}

/// Samples the memorization-phase Jacobian at `x = 0` for inverse
/// temperature `beta = 1/t`.
///
/// Element `(i, j)` is Gaussian with mean `-beta (1 + beta sigma_i^2)^{-1}`
/// on the diagonal (zero off it) and variance
/// `beta^2 (sigma_i^{-2} + beta)^{-1} [max(0, beta - beta_c(0)) +
/// max(0, beta - beta_c(e_j / sqrt(beta)))]`; each sub-critical term clamps
/// to zero, suppressing the fluctuations entirely when `beta < beta_c`
/// everywhere.
pub fn memorized_jacobian_sample(
    variances: &[f64],
    t: f64,
    alpha: f64,
    seed: u64,
    tc_mode: TcMode,
) -> Result<MemorizedJacobian> {
    if t <= 0.0 {
        return Err(Error::Time(t));
    }
    let beta = 1.0 / t;
    let d = variances.len();
    let origin = vec![0.0; d];
    let beta_c_origin = 1.0 / condensation_time(variances, &origin, alpha, tc_mode)?.t_c();
    // beta_c along each probe position e_j / sqrt(beta).
    let mut beta_c_probe = Vec::with_capacity(d);
    for j in 0..d {
        let mut x = vec![0.0; d];
        x[j] = 1.0 / beta.sqrt();
        beta_c_probe.push(1.0 / condensation_time(variances, &x, alpha, tc_mode)?.t_c());
    }
    let bracket = |j: usize| -> f64 {
        (beta - beta_c_origin).max(0.0) + (beta - beta_c_probe[j]).max(0.0)
    };
    let posterior = |i: usize| -> f64 {
        // (sigma_i^{-2} + beta)^{-1}, continuous at sigma_i = 0.
        variances[i] / (1.0 + beta * variances[i])
    };
    let mut rng = stream_rng(seed, 2);
    let mut matrix = DMatrix::zeros(d, d);
    for j in 0..d {
        let br = bracket(j);
        for i in 0..d {
            let mean = if i == j {
                -beta / (1.0 + beta * variances[i])
            } else {
                0.0
            };
            let var = beta * beta * posterior(i) * br;
            let noise: f64 = StandardNormal.sample(&mut rng);
            matrix[(i, j)] = mean + var.sqrt() * noise;
        }
    }
    let approx_singular_values = (0..d)
        .map(|i| {
            let mean = beta / (1.0 + beta * variances[i]);
            let var_ii = beta * beta * posterior(i) * bracket(i);
            -(mean * mean + var_ii * var_ii).sqrt()
        })
        .collect();
    Ok(MemorizedJacobian {
        matrix,
        approx_singular_values,
        beta,
        beta_c_origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_score::ExactScoreField;
    use crate::manifold_data::{sample_dataset, sample_projection, Geometry, VarianceProfile};
    use crate::rng::{normal_vector, stream_rng};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn toy_dataset(d: usize, m: usize, n: usize, seed: u64) -> crate::manifold_data::Dataset {
        let model = sample_projection(d, m, &VarianceProfile::Single(1.0), seed).unwrap();
        sample_dataset(&model, n, Geometry::Linear, seed + 1).unwrap()
    }

    #[test]
    fn single_point_score_is_exact_attraction() {
        let ds = toy_dataset(6, 3, 1, 4);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let x = normal_vector(6, &mut stream_rng(9, 0));
        let t = 0.4;
        let s = field.score(&x, t).unwrap();
        let expected = (ds.point(0) - &x) / t;
        assert!((s - expected).norm() < 1e-14);
    }

    #[test]
    fn symmetric_two_point_score_vanishes_at_midpoint() {
        let model = sample_projection(5, 2, &VarianceProfile::Single(1.0), 1).unwrap();
        let mut ds = sample_dataset(&model, 2, Geometry::Linear, 2).unwrap();
        let a = ds.point(0);
        ds.points.set_column(1, &(-&a));
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let s = field.score(&DVector::zeros(5), 0.7).unwrap();
        assert!(s.norm() < 1e-14);
    }

    #[test]
    fn score_matches_finite_difference_gradient() {
        let ds = toy_dataset(4, 2, 8, 7);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let t = 0.3;
        let x = normal_vector(4, &mut stream_rng(3, 0));
        let s = field.score(&x, t).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (field.log_density_unnormalized(&xp, t).unwrap()
                - field.log_density_unnormalized(&xm, t).unwrap())
                / (2.0 * h);
            assert_relative_eq!(s[i], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn score_is_finite_at_tiny_time() {
        // Without log-sum-exp stabilization these parameters overflow.
        let ds = toy_dataset(10, 4, 32, 11);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let x = normal_vector(10, &mut stream_rng(5, 0)) * 3.0;
        let s = field.score(&x, 1e-5).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        // As t -> 0 the score points to the nearest data point.
        let nearest = (0..ds.len())
            .min_by(|&a, &b| {
                let da = (ds.point(a) - &x).norm();
                let db = (ds.point(b) - &x).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let t = 1e-5;
        let expected = (ds.point(nearest) - &x) / t;
        let rel = (field.score(&x, t).unwrap() - &expected).norm() / expected.norm();
        assert!(rel < 1e-9, "relative deviation {rel}");
    }

    #[test]
    fn score_is_translation_consistent() {
        let mut ds = toy_dataset(6, 3, 12, 13);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let x = normal_vector(6, &mut stream_rng(17, 0));
        let shift = normal_vector(6, &mut stream_rng(17, 1));
        let s0 = field.score(&x, 0.5).unwrap();
        for mu in 0..ds.len() {
            let shifted = ds.point(mu) + &shift;
            ds.points.set_column(mu, &shifted);
        }
        let field_shifted = EmpiricalScoreField::new(&ds).unwrap();
        let s1 = field_shifted.score(&(&x + &shift), 0.5).unwrap();
        assert!((s0 - s1).norm() < 1e-9);
    }

    #[test]
    fn empirical_approaches_exact_in_self_averaging_regime() {
        let model = sample_projection(20, 8, &VarianceProfile::Single(1.0), 23).unwrap();
        let ds = sample_dataset(&model, 100_000, Geometry::Linear, 29).unwrap();
        let empirical = EmpiricalScoreField::new(&ds).unwrap();
        let exact = ExactScoreField::new(&model);
        let t = 1.0;
        let mut rel_devs = Vec::new();
        for k in 0..50 {
            let x = normal_vector(20, &mut stream_rng(31, k));
            let se = empirical.score(&x, t).unwrap();
            let sx = exact.score(&x, t).unwrap();
            rel_devs.push((se - &sx).norm() / sx.norm());
        }
        let mean: f64 = rel_devs.iter().sum::<f64>() / rel_devs.len() as f64;
        assert!(mean < 0.05, "mean relative deviation {mean}");
    }

    #[test]
    fn smoothed_jacobian_recovers_linear_jacobian() {
        let model = sample_projection(12, 5, &VarianceProfile::Single(1.0), 37).unwrap();
        let field = ExactScoreField::new(&model);
        let t = 0.2;
        let x = normal_vector(12, &mut stream_rng(41, 0));
        // Random orthonormal basis.
        let q = crate::rng::normal_matrix(12, 12, &mut stream_rng(41, 1))
            .qr()
            .q();
        let est = smoothed_jacobian(&field, &x, t, &q).unwrap();
        // True Jacobian column by column.
        let mut truth = DMatrix::zeros(12, 12);
        for j in 0..12 {
            let e = DVector::from_fn(12, |i, _| if i == j { 1.0 } else { 0.0 });
            truth.set_column(j, &(field.apply_wt(&e, t).unwrap() / t));
        }
        let dev = (&est - &truth).norm();
        assert!(dev < 1e-10 * truth.norm(), "deviation {dev:e}");
    }

    #[test]
    fn smoothed_jacobian_rejects_skew_basis() {
        let ds = toy_dataset(5, 2, 4, 43);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let mut basis = DMatrix::identity(5, 5);
        basis[(0, 1)] = 0.3;
        let x = DVector::zeros(5);
        assert!(smoothed_jacobian(&field, &x, 0.5, &basis).is_err());
    }

    #[test]
    fn smoothed_jacobian_columns_follow_basis_permutation() {
        let ds = toy_dataset(5, 2, 6, 47);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let x = normal_vector(5, &mut stream_rng(53, 0));
        let id = DMatrix::identity(5, 5);
        let cols = smoothed_jacobian_columns(&field, &x, 0.5, &id).unwrap();
        let mut permuted = id.clone();
        permuted.swap_columns(1, 3);
        let cols_p = smoothed_jacobian_columns(&field, &x, 0.5, &permuted).unwrap();
        let mut expected = cols.clone();
        expected.swap_columns(1, 3);
        assert!((cols_p - expected).norm() < 1e-14);
    }

    #[test]
    fn smoothed_jacobian_is_isotropic_at_large_time() {
        let ds = toy_dataset(8, 3, 16, 59);
        let field = EmpiricalScoreField::new(&ds).unwrap();
        let max_norm_sq = (0..ds.len())
            .map(|mu| ds.point(mu).norm_squared())
            .fold(0.0, f64::max);
        let t = 100.0 * max_norm_sq;
        let x = DVector::zeros(8);
        let id = DMatrix::identity(8, 8);
        let jac = smoothed_jacobian(&field, &x, t, &id).unwrap();
        let norms: Vec<f64> = (0..8).map(|j| jac.column(j).norm()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.02, "column norms spread {}", max / min);
    }

    #[test]
    fn zeta_reference_values() {
        // All variances zero is rejected upstream, but zeta itself gives 0.
        let (z, _) = zeta(1.0, 0.5, &[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(z, 0.0);
        // lambda = 0: zeta = 0 and zeta' = -r2/(2t).
        let variances = [1.0, 0.5, 0.0, 2.0];
        let x = [0.3, -0.2, 1.0, 0.1];
        let t = 0.7;
        let (z, dz) = zeta(0.0, t, &variances, &x).unwrap();
        let r2 = variances.iter().sum::<f64>() / 4.0;
        assert_eq!(z, 0.0);
        assert_relative_eq!(dz, -r2 / (2.0 * t), epsilon = 1e-14);
    }

    #[test]
    fn zeta_derivative_matches_finite_difference() {
        let variances = [1.0, 0.5, 0.0, 2.0, 0.3];
        let x = [0.3, -0.2, 1.0, 0.1, -0.7];
        let t = 0.9;
        for &lambda in &[0.5, 1.0, 2.0] {
            let (_, dz) = zeta(lambda, t, &variances, &x).unwrap();
            let h = 1e-6;
            let (zp, _) = zeta(lambda + h, t, &variances, &x).unwrap();
            let (zm, _) = zeta(lambda - h, t, &variances, &x).unwrap();
            let fd = (zp - zm) / (2.0 * h);
            assert_relative_eq!(dz, fd, epsilon = 1e-8, max_relative = 1e-7);
        }
    }

    #[test]
    fn zeta_large_time_expansion() {
        let variances: Vec<f64> = (0..50).map(|i| if i < 20 { 1.0 } else { 0.0 }).collect();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin()).collect();
        let (r2, r4, omega) = moment_stats(&variances, &x);
        let t = 50.0;
        let (z, _) = zeta(1.0, t, &variances, &x).unwrap();
        let expansion = -r2 / (2.0 * t) + r4 / (4.0 * t * t) + omega / (2.0 * t * t);
        assert_relative_eq!(z, expansion, max_relative = 1e-3);
    }

    #[test]
    fn zeta_branch_violation() {
        assert!(zeta(-2.0, 1.0, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn condensation_time_reference_values() {
        // Isotropic sigma^2 = 1 in all 100 dimensions at the origin.
        let variances = vec![1.0; 100];
        let origin = vec![0.0; 100];
        let report = condensation_time(&variances, &origin, 0.15, TcMode::Approximate).unwrap();
        assert_relative_eq!(report.t_c_approx, (0.5f64 / 0.3).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(report.t_c_approx, 1.2910, epsilon = 1e-4);
        assert!(report.t_c_exact.is_none());
        // Half the dimensions at variance 1: r4 = 0.5.
        let mut variances = vec![0.0; 100];
        variances[..50].fill(1.0);
        let report = condensation_time(&variances, &origin, 0.15, TcMode::Exact).unwrap();
        assert_relative_eq!(report.r4, 0.5);
        assert_relative_eq!(report.t_c_approx, (0.25f64 / 0.3).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(report.t_c_approx, 0.9129, epsilon = 1e-4);
        // The exact root satisfies the condensation condition.
        let tc = report.t_c_exact.unwrap();
        let (z, dz) = zeta(1.0, tc, &variances, &origin).unwrap();
        assert!((0.15 + z - dz).abs() < 1e-9);
    }

    #[test]
    fn condensation_rejects_bad_arguments() {
        assert!(condensation_time(&[1.0], &[0.0], 0.0, TcMode::Approximate).is_err());
        assert!(condensation_time(&[0.0], &[0.0], 0.1, TcMode::Approximate).is_err());
        assert!(condensation_time(&[1.0, 1.0], &[0.0], 0.1, TcMode::Approximate).is_err());
    }

    #[test]
    fn approx_tc_is_monotone_in_directional_variance() {
        let variances = vec![1.0, 1.0, 0.0, 0.0];
        let alpha = 0.2;
        let mut last = 0.0;
        for k in 0..20 {
            let scale = k as f64 * 0.25;
            let x = vec![scale, 0.0, 0.0, 0.0];
            let r = condensation_time(&variances, &x, alpha, TcMode::Approximate).unwrap();
            assert!(r.t_c_approx > last);
            last = r.t_c_approx;
        }
    }

    #[test]
    fn participation_identities() {
        let (y, n_eff) = participation(2.0, 1.0).unwrap();
        assert_relative_eq!(y, 0.5);
        assert_relative_eq!(n_eff, 2.0);
        // Y * N_eff = 1 wherever both are defined.
        for k in 1..50 {
            let beta = 1.0 + k as f64 * 0.37;
            let (y, n) = participation(beta, 1.0).unwrap();
            assert_relative_eq!(y * n, 1.0, epsilon = 1e-12);
        }
        // beta -> infinity: a single pattern dominates.
        let (_, n_eff) = participation(1e6, 1.0).unwrap();
        assert_relative_eq!(n_eff, 1.0, epsilon = 1e-5);
        // Divergence just above the transition.
        let (_, n_eff) = participation(1.0 + 1e-9, 1.0).unwrap();
        assert_relative_eq!(n_eff, 1e9, max_relative = 1e-3);
        assert!(participation(0.5, 1.0).is_err());
    }

    #[test]
    fn memorized_jacobian_subcritical_is_deterministic_diagonal() {
        let mut variances = vec![0.0; 20];
        variances[..8].fill(1.0);
        // beta far below beta_c: variance clamps to zero everywhere.
        let report = condensation_time(&variances, &vec![0.0; 20], 0.15, TcMode::Approximate)
            .unwrap();
        let beta = 0.5 / report.t_c_approx;
        let t = 1.0 / beta;
        let mj = memorized_jacobian_sample(&variances, t, 0.15, 5, TcMode::Approximate).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let expected = if i == j {
                    -beta / (1.0 + beta * variances[i])
                } else {
                    0.0
                };
                assert_relative_eq!(mj.matrix[(i, j)], expected, epsilon = 1e-12);
            }
        }
        for (i, &s) in mj.approx_singular_values.iter().enumerate() {
            assert_relative_eq!(s, -beta / (1.0 + beta * variances[i]), epsilon = 1e-12);
        }
    }

    #[test]
    fn memorized_jacobian_orthogonal_rows_give_unit_magnitude() {
        let mut variances = vec![0.0; 30];
        variances[..12].fill(1.0);
        let mj =
            memorized_jacobian_sample(&variances, 1e-3, 0.15, 9, TcMode::Approximate).unwrap();
        let normalized = mj.normalized_approx_magnitudes();
        for i in 12..30 {
            assert_relative_eq!(normalized[i], 1.0, epsilon = 1e-12);
        }
        // Tangent magnitudes sit far above the atom at large beta.
        for i in 0..12 {
            assert!(normalized[i] > 2.0);
        }
    }

    #[test]
    fn memorized_jacobian_reproducible_from_seed() {
        let mut variances = vec![0.0; 16];
        variances[..6].fill(1.0);
        let a = memorized_jacobian_sample(&variances, 0.05, 0.2, 77, TcMode::Approximate).unwrap();
        let b = memorized_jacobian_sample(&variances, 0.05, 0.2, 77, TcMode::Approximate).unwrap();
        assert_eq!(a.matrix, b.matrix);
        let c = memorized_jacobian_sample(&variances, 0.05, 0.2, 78, TcMode::Approximate).unwrap();
        assert_ne!(a.matrix, c.matrix);
    }
}
