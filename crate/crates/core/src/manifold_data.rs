//! Linear (and ellipsoidal) manifold datasets with known eigen-structure.
//!
//! Data points live in an ambient space of dimension `d` and are generated
//! by projecting latent Gaussian vectors through a random `d x m` matrix
//! `F`. Column `k` of `F` is drawn i.i.d. `N(0, sigma_k^2 / m)`, so the
//! population covariance of the data is `F F^T` and the nonzero eigenvalues
//! of `F F^T` concentrate on `[sigma^2 (1 - alpha_m^{-1/2})^2,
//! sigma^2 (1 + alpha_m^{-1/2})^2]` with `alpha_m = m / d`. This single
//! scaling convention is used everywhere in the crate.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Relative threshold below which an eigenvalue of `F F^T` is treated as an
/// exact zero (orthogonal direction). Well above symmetric-eigensolver noise
/// (~1e-14 relative), far below any genuine variance.
const ZERO_EIGENVALUE_RTOL: f64 = 1e-12;

/// Relative eigenvalue threshold used for rank counting.
pub const RANK_RTOL: f64 = 1e-8;

/// Variances of the latent subspaces generating the columns of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarianceProfile {
    /// All `m` columns share one variance.
    Single(f64),
    /// A fraction `fraction` of the columns has variance `sigma1_sq`, the
    /// rest `sigma2_sq`.
    TwoBlock {
        sigma1_sq: f64,
        sigma2_sq: f64,
        fraction: f64,
    },
    /// One variance per latent column; the list length must equal `m`.
    PerDimension(Vec<f64>),
}

impl VarianceProfile {
    /// Checks the profile against a latent dimension `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        let non_negative = |vs: &[f64]| -> Result<()> {
            if vs.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::Profile("variances must be finite and >= 0".into()));
            }
            if vs.iter().all(|&v| v == 0.0) {
                return Err(Error::Profile("at least one variance must be > 0".into()));
            }
            Ok(())
        };
        match self {
            VarianceProfile::Single(s2) => non_negative(&[*s2]),
            VarianceProfile::TwoBlock {
                sigma1_sq,
                sigma2_sq,
                fraction,
            } => {
                non_negative(&[*sigma1_sq, *sigma2_sq])?;
                if !(0.0 < *fraction && *fraction < 1.0) {
                    return Err(Error::Profile(format!(
                        "fraction {fraction} must lie strictly inside (0, 1)"
                    )));
                }
                let n1 = round_half_even(fraction * m as f64);
                if n1 < 1 || n1 >= m {
                    return Err(Error::Profile(format!(
                        "fraction {fraction} gives {n1} of {m} columns in the first block; \
                         both blocks must be non-empty"
                    )));
                }
                Ok(())
            }
            VarianceProfile::PerDimension(vs) => {
                if vs.len() != m {
                    return Err(Error::Profile(format!(
                        "per-dimension profile has {} entries, expected m = {m}",
                        vs.len()
                    )));
                }
                non_negative(vs)
            }
        }
    }

    /// Expands the profile into the `m` per-column variances.
    pub fn column_variances(&self, m: usize) -> Result<Vec<f64>> {
        self.validate(m)?;
        Ok(match self {
            VarianceProfile::Single(s2) => vec![*s2; m],
            VarianceProfile::TwoBlock {
                sigma1_sq,
                sigma2_sq,
                fraction,
            } => {
                let n1 = round_half_even(fraction * m as f64);
                let mut vs = vec![*sigma1_sq; n1];
                vs.extend(std::iter::repeat(*sigma2_sq).take(m - n1));
                vs
            }
            VarianceProfile::PerDimension(vs) => vs.clone(),
        })
    }
}

/// Rounds to the nearest integer, ties to even.
fn round_half_even(x: f64) -> usize {
    let floor = x.floor();
    let frac = x - floor;
    let lo = floor as usize;
    if frac > 0.5 {
        lo + 1
    } else if frac < 0.5 {
        lo
    } else if lo % 2 == 0 {
        lo
    } else {
        lo + 1
    }
}

/// Eigen-decomposition of `F F^T`, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenData {
    /// The `d` eigenvalues, descending; at least `d - m` of them exactly zero.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, column `j` matching `eigenvalues[j]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenData {
    /// Eigen-structure of `F F^T` computed from the SVD of `F`: the `d - m`
    /// orthogonal directions get exactly zero eigenvalues (a symmetric
    /// eigensolver on the rank-deficient `d x d` matrix leaves `~1e-8`
    /// noise on them), and the complement basis is completed by QR.
    fn from_projection(f: &DMatrix<f64>) -> Self {
        let d = f.nrows();
        let m = f.ncols();
        let svd = f.clone().svd(true, false);
        let u = svd.u.expect("SVD with U requested");
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let max_sq = svd.singular_values.iter().map(|s| s * s).fold(0.0, f64::max);
        let mut eigenvalues = DVector::zeros(d);
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (j, &k) in order.iter().enumerate() {
            let lambda = svd.singular_values[k] * svd.singular_values[k];
            eigenvalues[j] = if lambda < ZERO_EIGENVALUE_RTOL * max_sq {
                0.0
            } else {
                lambda
            };
            eigenvectors.set_column(j, &u.column(k));
        }
        if d > m {
            // Complete the orthonormal basis: QR of [U | I] puts an
            // orthonormal spanning set of col(U)^perp in columns m..d.
            let mut extended = DMatrix::zeros(d, m + d);
            extended.view_mut((0, 0), (d, m)).copy_from(&u);
            extended
                .view_mut((0, m), (d, d))
                .copy_from(&DMatrix::identity(d, d));
            let q = extended.qr().q();
            for j in m..d {
                eigenvectors.set_column(j, &q.column(j));
            }
        }
        Self {
            eigenvalues,
            eigenvectors,
        }
    }

    /// Rebuilds `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.eigenvectors.nrows(), self.eigenvectors.ncols(), |i, j| {
            self.eigenvectors[(i, j)] * self.eigenvalues[j]
        });
        &scaled * self.eigenvectors.transpose()
    }

    /// Number of eigenvalues above `RANK_RTOL` times the largest.
    pub fn rank(&self) -> usize {
        let max = self.eigenvalues.iter().cloned().fold(0.0, f64::max);
        self.eigenvalues.iter().filter(|&&v| v > RANK_RTOL * max).count()
    }
}

/// A random linear manifold: projection matrix, dimensions and spectrum.
#[derive(Debug, Clone)]
pub struct LinearManifoldModel {
    /// Ambient dimension.
    pub d: usize,
    /// Latent dimension.
    pub m: usize,
    /// The `d x m` projection matrix.
    pub f: DMatrix<f64>,
    /// `m / d`.
    pub alpha_m: f64,
    /// Spectrum of `F F^T`.
    pub eigen: EigenData,
    profile: VarianceProfile,
    seed: u64,
}

impl LinearManifoldModel {
    pub fn profile(&self) -> &VarianceProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Eigenvalues of `F F^T` (descending).
    pub fn gammas(&self) -> &DVector<f64> {
        &self.eigen.eigenvalues
    }

    /// `trace(F F^T)`, used by spectral moment checks.
    pub fn covariance_trace(&self) -> f64 {
        self.f.iter().map(|v| v * v).sum()
    }

    /// JSON document with dimensions, profile, seed and the dense `F`
    /// (row-major) for reproducibility.
    pub fn to_json(&self, include_matrix: bool) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "d": self.d,
            "m": self.m,
            "alpha_m": self.alpha_m,
            "profile": self.profile,
            "seed": self.seed,
        });
        if include_matrix {
            let rows: Vec<f64> = (0..self.d)
                .flat_map(|i| (0..self.m).map(move |j| (i, j)))
                .map(|(i, j)| self.f[(i, j)])
                .collect();
            doc["f_row_major"] = serde_json::json!(rows);
        }
        doc
    }
}

/// Whether dataset points fill the latent hyperplane or its unit ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Linear,
    Ellipsoid,
}

/// Sampled data points, stored as the columns of a `d x N` matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: DMatrix<f64>,
    pub geometry: Geometry,
    seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn point(&self, mu: usize) -> DVector<f64> {
        self.points.column(mu).into_owned()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// JSON document (dimensions, geometry, seed, points row-major).
    pub fn to_json(&self, include_points: bool) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "d": self.dim(),
            "n": self.len(),
            "geometry": self.geometry,
            "seed": self.seed,
        });
        if include_points {
            let rows: Vec<f64> = (0..self.len())
                .flat_map(|mu| self.points.column(mu).iter().cloned().collect::<Vec<_>>())
                .collect();
            doc["points_row_major"] = serde_json::json!(rows);
        }
        doc
    }
}

/// Draws the projection matrix for `(d, m, profile)` and computes its
/// eigen-structure. Deterministic in `seed`.
pub fn sample_projection(
    d: usize,
    m: usize,
    profile: &VarianceProfile,
    seed: u64,
) -> Result<LinearManifoldModel> {
    if d == 0 || m == 0 {
        return Err(Error::Dimension(format!(
            "dimensions must be positive, got d = {d}, m = {m}"
        )));
    }
    if m > d {
        return Err(Error::Dimension(format!(
            "latent dimension m = {m} exceeds ambient dimension d = {d}"
        )));
    }
    let variances = profile.column_variances(m)?;
    let mut rng = stream_rng(seed, 0);
    let mut f = DMatrix::zeros(d, m);
    // Column k has entry variance sigma_k^2 / m.
    for k in 0..m {
        let scale = (variances[k] / m as f64).sqrt();
        for i in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            f[(i, k)] = scale * z;
        }
    }
    let eigen = EigenData::from_projection(&f);
    Ok(LinearManifoldModel {
        d,
        m,
        f,
        alpha_m: m as f64 / d as f64,
        eigen,
        profile: profile.clone(),
        seed,
    })
}

/// Draws `n` data points `y = F z` with `z ~ N(0, I_m)`; the `Ellipsoid`
/// geometry normalizes each latent vector to unit length first.
pub fn sample_dataset(
    model: &LinearManifoldModel,
    n: usize,
    geometry: Geometry,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dimension("dataset size must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, 1);
    let mut points = DMatrix::zeros(model.d, n);
    for mu in 0..n {
        let mut z = DVector::from_fn(model.m, |_, _| StandardNormal.sample(&mut rng));
        if geometry == Geometry::Ellipsoid {
            let norm = z.norm();
            if norm == 0.0 {
                return Err(Error::Degenerate("zero latent vector".into()));
            }
            z /= norm;
        }
        points.set_column(mu, &(&model.f * z));
    }
    Ok(Dataset {
        points,
        geometry,
        seed,
    })
}
