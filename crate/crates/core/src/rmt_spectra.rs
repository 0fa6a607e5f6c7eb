//! Analytic spectral densities of the dimensionless Jacobian factor `W_t`
//! in the thermodynamic limit `d, m -> infinity` at fixed `alpha_m = m/d`.
//!
//! Single variance: the eigenvalues `gamma` of `F F^T` follow a
//! Marchenko-Pastur bulk (total mass `alpha_m`) plus a zero atom of mass
//! `1 - alpha_m`; pushing through `r = -t/(t + gamma)` gives the `W_t`
//! density on `[-1, 0]` with the atom landing at `r = -1`.
//!
//! Two variances: the `gamma` bulk density is recovered from the resolvent
//! of `F F^T`, whose replica-symmetric saddle point `q*(z)` solves a cubic;
//! the Stieltjes inversion `rho(gamma) = (alpha_m/pi) Im q*(gamma - i eps)`
//! is evaluated on a grid and transformed the same way.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_score::{mp_gamma_edges, wt_eigenvalue};

/// Density threshold below which a grid point counts as outside the support.
const SUPPORT_THRESHOLD: f64 = 1e-8;
/// Number of scan points for support detection.
const SUPPORT_SCAN_POINTS: usize = 2048;
/// Imaginary offsets for the Stieltjes inversion; the density is Richardson
/// extrapolated from these two evaluations. The offsets must sit well below
/// the support threshold: the inversion leaks `O(eps / sqrt(distance))`
/// Poisson mass outside every square-root edge, which would otherwise bury
/// the spectral gaps.
const STIELTJES_EPS: f64 = 1e-13;
const STIELTJES_EPS_COARSE: f64 = 1e-12;

// --- coordinate maps -------------------------------------------------------

/// `r = -t/(t + gamma)`, increasing in `gamma`.
pub fn r_of_gamma(gamma: f64, t: f64) -> f64 {
    wt_eigenvalue(gamma, t)
}

/// Inverse map `gamma = -t (1 + r) / r` for `r` in `(-1, 0)`.
pub fn gamma_of_r(r: f64, t: f64) -> f64 {
    -t * (1.0 + r) / r
}

/// Transforms a density over `gamma` into one over `r` (same measure).
pub fn push_gamma_density_to_r(rho_gamma_at: f64, r: f64, t: f64) -> f64 {
    // |d gamma / d r| = t / r^2
    rho_gamma_at * t / (r * r)
}

/// Transforms a density over `r` back to one over `gamma`.
pub fn push_r_density_to_gamma(rho_r_at: f64, gamma: f64, t: f64) -> f64 {
    // |d r / d gamma| = t / (t + gamma)^2
    rho_r_at * t / ((t + gamma) * (t + gamma))
}

// --- single variance -------------------------------------------------------

/// Bulk density of the `F F^T` spectrum for a single variance, as part of
/// the full `d`-dimensional spectral measure: integrates to `alpha_m`.
pub fn mp_density_gamma(sigma_sq: f64, alpha_m: f64, gamma: f64) -> f64 {
    let (lo, hi) = mp_gamma_edges(sigma_sq, alpha_m);
    if gamma <= lo || gamma >= hi {
        return 0.0;
    }
    alpha_m * ((hi - gamma) * (gamma - lo)).sqrt() / (2.0 * std::f64::consts::PI * sigma_sq * gamma)
}

/// Support of the `W_t` bulk for a single variance, `(r_lo, r_hi)` with
/// `r_lo = r(gamma_minus)` adjacent to the atom side and `r_hi = r(gamma_plus)`
/// adjacent to zero.
pub fn mp_wt_support(sigma_sq: f64, alpha_m: f64, t: f64) -> (f64, f64) {
    let (lo, hi) = mp_gamma_edges(sigma_sq, alpha_m);
    (r_of_gamma(lo, t), r_of_gamma(hi, t))
}

/// Bulk density of the `W_t` spectrum for a single variance, the exact
/// pushforward of [`mp_density_gamma`]; integrates to `alpha_m`, with the
/// remaining `1 - alpha_m` carried by the atom at `r = -1`.
pub fn mp_density_wt(sigma_sq: f64, alpha_m: f64, t: f64, r: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Time(t));
    }
    if !(0.0 < alpha_m && alpha_m <= 1.0) {
        return Err(Error::Domain(format!("alpha_m = {alpha_m} not in (0, 1]")));
    }
    if !(-1.0..=0.0).contains(&r) {
        return Err(Error::Domain(format!("r = {r} outside [-1, 0]")));
    }
    if r == 0.0 || r == -1.0 {
        // gamma = infinity resp. the atom location; no bulk density there.
        return Ok(0.0);
    }
    let gamma = gamma_of_r(r, t);
    Ok(push_gamma_density_to_r(
        mp_density_gamma(sigma_sq, alpha_m, gamma),
        r,
        t,
    ))
}

// --- spectral density container --------------------------------------------

/// A point mass of the spectral measure.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// One connected bulk component, sampled on a grid inside its support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BulkComponent {
    /// Support interval `[a, b]`.
    pub support: (f64, f64),
    /// Strictly increasing abscissae, first `= a`, last `= b`.
    pub grid: Vec<f64>,
    /// Density samples matching `grid`.
    pub density: Vec<f64>,
}

impl BulkComponent {
    /// Trapezoid mass of the component.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Trapezoid mass of the component up to `x`.
    fn partial_mass(&self, x: f64) -> f64 {
        if x <= self.support.0 {
            return 0.0;
        }
        if x >= self.support.1 {
            return self.mass();
        }
        let mut acc = 0.0;
        for w in self.grid.windows(2).zip(self.density.windows(2)) {
            let ((x0, x1), (y0, y1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
            if x <= x0 {
                break;
            }
            if x >= x1 {
                acc += 0.5 * (y0 + y1) * (x1 - x0);
            } else {
                let yx = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                acc += 0.5 * (y0 + yx) * (x - x0);
                break;
            }
        }
        acc
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// A spectral measure: bulk components plus point masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub bulks: Vec<BulkComponent>,
    pub atoms: Vec<Atom>,
}

impl SpectralDensity {
    pub fn bulk_mass(&self) -> f64 {
        self.bulks.iter().map(|b| b.mass()).sum()
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.bulk_mass() + self.atom_mass()
    }

    /// Right-continuous CDF of the measure.
    pub fn cdf(&self, x: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.location <= x)
            .map(|a| a.weight)
            .sum();
        let bulks: f64 = self.bulks.iter().map(|b| b.partial_mass(x)).sum();
        atoms + bulks
    }

    /// Quantile of the magnitude measure `|value|`; all supported mass must
    /// lie in `[-1, 0]`, as is the case for `W_t` spectra.
    pub fn magnitude_quantile(&self, p: f64) -> f64 {
        // Segments of the |value| measure, sorted by magnitude.
        #[derive(Clone)]
        enum Seg {
            Atom(f64, f64),
            // (grid of magnitudes ascending, densities, mass)
            Bulk(Vec<f64>, Vec<f64>, f64),
        }
        let mut segs: Vec<(f64, Seg)> = Vec::new();
        for a in &self.atoms {
            segs.push((a.location.abs(), Seg::Atom(a.location.abs(), a.weight)));
        }
        for b in &self.bulks {
            let mags: Vec<f64> = b.grid.iter().rev().map(|x| x.abs()).collect();
            let dens: Vec<f64> = b.density.iter().rev().cloned().collect();
            let mass = b.mass();
            segs.push((mags[0], Seg::Bulk(mags, dens, mass)));
        }
        segs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total = self.total_mass();
        let target = p.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for (_, seg) in &segs {
            match seg {
                Seg::Atom(loc, w) => {
                    if acc + w >= target {
                        return *loc;
                    }
                    acc += w;
                }
                Seg::Bulk(mags, dens, mass) => {
                    if acc + mass >= target {
                        // Walk the trapezoid cumulative inside the component.
                        let mut inner = 0.0;
                        for k in 0..mags.len() - 1 {
                            let step =
                                0.5 * (dens[k] + dens[k + 1]) * (mags[k + 1] - mags[k]);
                            if acc + inner + step >= target && step > 0.0 {
                                let frac = (target - acc - inner) / step;
                                return mags[k] + frac * (mags[k + 1] - mags[k]);
                            }
                            inner += step;
                        }
                        return *mags.last().unwrap();
                    }
                    acc += mass;
                }
            }
        }
        segs.last().map(|(m, _)| *m).unwrap_or(0.0)
    }
}

/// Builds the single-variance `W_t` spectral density on a cosine-spaced grid
/// (clustered at the square-root edges).
pub fn single_variance_density_wt(
    sigma_sq: f64,
    alpha_m: f64,
    t: f64,
    grid_points: usize,
) -> Result<SpectralDensity> {
    let (r_lo, r_hi) = mp_wt_support(sigma_sq, alpha_m, t);
    let grid = cosine_grid(r_lo, r_hi, grid_points.max(8));
    let density: Vec<f64> = grid
        .iter()
        .map(|&r| mp_density_wt(sigma_sq, alpha_m, t, r))
        .collect::<Result<_>>()?;
    let mut atoms = Vec::new();
    if alpha_m < 1.0 {
        atoms.push(Atom {
            location: -1.0,
            weight: 1.0 - alpha_m,
        });
    }
    Ok(SpectralDensity {
        bulks: vec![BulkComponent {
            support: (r_lo, r_hi),
            grid,
            density,
        }],
        atoms,
    })
}

/// Grid on `[a, b]` with Chebyshev-style clustering at both ends.
fn cosine_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..n)
        .map(|k| mid - half * (std::f64::consts::PI * k as f64 / (n - 1) as f64).cos())
        .collect()
}

// --- two-variance replica solution -----------------------------------------

/// Parameters of the two-variance projection ensemble.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoVarianceParams {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Fraction of latent columns carrying `sigma1_sq`.
    pub fraction: f64,
    pub alpha_m: f64,
}

impl TwoVarianceParams {
    pub fn new(sigma1_sq: f64, sigma2_sq: f64, fraction: f64, alpha_m: f64) -> Result<Self> {
        if sigma1_sq <= 0.0 || sigma2_sq <= 0.0 {
            return Err(Error::Domain(
                "two-variance solver requires both variances > 0".into(),
            ));
        }
        if !(0.0 < fraction && fraction < 1.0) {
            return Err(Error::Domain(format!(
                "fraction = {fraction} not in (0, 1)"
            )));
        }
        if !(0.0 < alpha_m && alpha_m <= 1.0) {
            return Err(Error::Domain(format!("alpha_m = {alpha_m} not in (0, 1]")));
        }
        Ok(Self {
            sigma1_sq,
            sigma2_sq,
            fraction,
            alpha_m,
        })
    }

    /// Mean of the full `gamma` spectrum, `f sigma1^2 + (1 - f) sigma2^2`.
    pub fn first_moment(&self) -> f64 {
        self.fraction * self.sigma1_sq + (1.0 - self.fraction) * self.sigma2_sq
    }
}

/// Saddle value of the replica resolvent at one spectral argument.
#[derive(Debug, Clone, Copy)]
pub struct StieltjesSolution {
    pub z: Complex64,
    pub q_star: Complex64,
    /// Stieltjes transform of the full `d`-dimensional spectral measure
    /// (zero atom plus bulk). The saddle value is the resolvent itself:
    /// `q* ~ 1/z` at infinity and `q* ~ (1 - alpha_m)/z` at the origin,
    /// carrying total mass one.
    pub g: Complex64,
}

/// Solves the saddle-point cubic for the two-variance resolvent at complex
/// `z` and returns the root on the density branch (`Im q >= 0` when
/// `Im z < 0`, and conversely).
pub fn solve_two_variance_stieltjes(
    params: &TwoVarianceParams,
    z: Complex64,
) -> Result<StieltjesSolution> {
    if z.im == 0.0 {
        return Err(Error::Domain("spectral argument must have Im(z) != 0".into()));
    }
    let (s1, s2, f, a) = (
        params.sigma1_sq,
        params.sigma2_sq,
        params.fraction,
        params.alpha_m,
    );
    let c3 = z;
    let c2 = Complex64::from(a - 1.0) - z * (a / s1) - z * (a / s2);
    let c1 = (z - Complex64::from(f * s1 + (1.0 - f) * s2)) * (a * a / (s1 * s2))
        + Complex64::from(a / s1 + a / s2);
    let c0 = Complex64::from(-a * a / (s1 * s2));
    let roots = cubic::solve(c3, c2, c1, c0);
    // The density branch has Im(q) opposite in sign to Im(z).
    let want_positive = z.im < 0.0;
    let branch = roots
        .iter()
        .filter(|q| if want_positive { q.im > -1e-12 } else { q.im < 1e-12 })
        .max_by(|p, q| {
            let (vp, vq) = if want_positive {
                (p.im, q.im)
            } else {
                (-p.im, -q.im)
            };
            vp.partial_cmp(&vq).unwrap()
        })
        .copied()
        .ok_or_else(|| {
            Error::Domain(format!(
                "no saddle root on the density branch at z = {z} \
                 (point outside the support closure)"
            ))
        })?;
    Ok(StieltjesSolution {
        z,
        q_star: branch,
        g: branch,
    })
}

/// Bulk density of the `gamma` spectrum for the two-variance ensemble,
/// `rho(gamma) = (1/pi) Im q*(gamma - i eps)` with the known zero-atom
/// contribution removed analytically and Richardson extrapolation in the
/// imaginary offset. Integrates to `alpha_m` over the full support.
pub fn two_variance_density_gamma(params: &TwoVarianceParams, gamma: f64) -> Result<f64> {
    let atom_weight = 1.0 - params.alpha_m;
    let im_bulk = |eps: f64| -> Result<f64> {
        let sol = solve_two_variance_stieltjes(params, Complex64::new(gamma, -eps))?;
        // The resolvent includes the atom at zero; its Poisson kernel is
        // exactly (1 - alpha) eps / (gamma^2 + eps^2).
        Ok(sol.q_star.im - atom_weight * eps / (gamma * gamma + eps * eps))
    };
    let fine = im_bulk(STIELTJES_EPS)?;
    let coarse = im_bulk(STIELTJES_EPS_COARSE)?;
    // Poisson smoothing is O(eps^2) in the interior; extrapolate and clamp.
    let e1 = STIELTJES_EPS * STIELTJES_EPS;
    let e2 = STIELTJES_EPS_COARSE * STIELTJES_EPS_COARSE;
    let extrapolated = (e2 * fine - e1 * coarse) / (e2 - e1);
    Ok((extrapolated / std::f64::consts::PI).max(0.0))
}

/// Connected support components of the two-variance `gamma` bulk, detected
/// on a log grid and refined by bisection to `1e-10` relative accuracy.
pub fn two_variance_support_gamma(params: &TwoVarianceParams) -> Result<Vec<(f64, f64)>> {
    let ceil = support_ceiling(params);
    let floor = ceil * 1e-8;
    let ratio = ceil / floor;
    let grid: Vec<f64> = (0..SUPPORT_SCAN_POINTS)
        .map(|k| floor * ratio.powf(k as f64 / (SUPPORT_SCAN_POINTS - 1) as f64))
        .collect();
    let inside: Vec<bool> = grid
        .iter()
        .map(|&g| Ok(two_variance_density_gamma(params, g)? > SUPPORT_THRESHOLD))
        .collect::<Result<_>>()?;
    let mut components = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..grid.len() {
        match (start, inside[k]) {
            (None, true) => start = Some(k),
            (Some(s), false) => {
                components.push((refine_edge(params, grid[s], true)?, refine_edge(params, grid[k - 1], false)?));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        components.push((
            refine_edge(params, grid[s], true)?,
            refine_edge(params, *grid.last().unwrap(), false)?,
        ));
    }
    if components.is_empty() {
        return Err(Error::Domain(
            "no support detected for the two-variance density".into(),
        ));
    }
    Ok(components)
}

/// Upper bound for the support scan.
fn support_ceiling(params: &TwoVarianceParams) -> f64 {
    let (e1, e2) = mixture_approx_outer_edges(params);
    let pooled = mp_gamma_edges(params.sigma1_sq.max(params.sigma2_sq), params.alpha_m).1;
    1.5 * e1.max(e2).max(pooled)
}

/// Outer (upper) edges of the two approximate Marchenko-Pastur bulks.
fn mixture_approx_outer_edges(params: &TwoVarianceParams) -> (f64, f64) {
    let (s1, s2, f, a) = (
        params.sigma1_sq,
        params.sigma2_sq,
        params.fraction,
        params.alpha_m,
    );
    (
        f * s1 * (1.0 + (1.0 / (f * a)).sqrt()).powi(2),
        (1.0 - f) * s2 * (1.0 + (1.0 / ((1.0 - f) * a)).sqrt()).powi(2),
    )
}

/// Bisects one support edge: `from_outside = true` refines a lower edge
/// (density below threshold just outside), `false` an upper edge.
fn refine_edge(params: &TwoVarianceParams, near: f64, lower_edge: bool) -> Result<f64> {
    // One scan step on either side brackets the crossing.
    let step = (support_ceiling(params) / (support_ceiling(params) * 1e-8))
        .powf(1.0 / (SUPPORT_SCAN_POINTS - 1) as f64);
    let (mut out, mut ins) = if lower_edge {
        (near / step, near)
    } else {
        (near * step, near)
    };
    for _ in 0..60 {
        if (out - ins).abs() <= 1e-10 * ins.abs() {
            break;
        }
        let mid = 0.5 * (out + ins);
        if two_variance_density_gamma(params, mid)? > SUPPORT_THRESHOLD {
            ins = mid;
        } else {
            out = mid;
        }
    }
    Ok(0.5 * (out + ins))
}

/// Approximate inner edges of the two bulks when `sigma2^2 << sigma1^2`,
/// treating the spectrum as two rescaled Marchenko-Pastur laws. Returns
/// `(gamma_plus_of_sigma1, gamma_minus_of_sigma2)`: the lower edge of the
/// high-variance bulk and the upper edge of the low-variance bulk.
pub fn mixture_approx_edges(params: &TwoVarianceParams) -> (f64, f64) {
    let (s1, s2, f, a) = (
        params.sigma1_sq,
        params.sigma2_sq,
        params.fraction,
        params.alpha_m,
    );
    (
        f * s1 * (1.0 - (1.0 / (f * a)).sqrt()).powi(2),
        (1.0 - f) * s2 * (1.0 + (1.0 / ((1.0 - f) * a)).sqrt()).powi(2),
    )
}

/// Builds the two-variance `W_t` density over the caller's `r` grid, adding
/// the refined support edges of every component. Points of the grid outside
/// the support are dropped.
pub fn two_variance_density_wt(
    params: &TwoVarianceParams,
    t: f64,
    r_grid: &[f64],
) -> Result<SpectralDensity> {
    if t <= 0.0 {
        return Err(Error::Time(t));
    }
    for &r in r_grid {
        if !(-1.0 < r && r < 0.0) {
            return Err(Error::Domain(format!("grid point r = {r} outside (-1, 0)")));
        }
    }
    let gamma_components = two_variance_support_gamma(params)?;
    let mut bulks = Vec::new();
    for &(glo, ghi) in &gamma_components {
        let (rlo, rhi) = (r_of_gamma(glo, t), r_of_gamma(ghi, t));
        let mut grid: Vec<f64> = r_grid
            .iter()
            .copied()
            .filter(|&r| rlo < r && r < rhi)
            .collect();
        grid.push(rlo);
        grid.push(rhi);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let density = grid
            .iter()
            .map(|&r| {
                let gamma = gamma_of_r(r, t);
                Ok(push_gamma_density_to_r(
                    two_variance_density_gamma(params, gamma)?,
                    r,
                    t,
                ))
            })
            .collect::<Result<Vec<f64>>>()?;
        bulks.push(BulkComponent {
            support: (rlo, rhi),
            grid,
            density,
        });
    }
    let mut atoms = Vec::new();
    if params.alpha_m < 1.0 {
        atoms.push(Atom {
            location: -1.0,
            weight: 1.0 - params.alpha_m,
        });
    }
    Ok(SpectralDensity { bulks, atoms })
}

/// Like [`two_variance_density_wt`] but with `points_per_component`
/// cosine-spaced abscissae per bulk, the accurate path for mass and CDF work.
pub fn two_variance_density_wt_auto(
    params: &TwoVarianceParams,
    t: f64,
    points_per_component: usize,
) -> Result<SpectralDensity> {
    if t <= 0.0 {
        return Err(Error::Time(t));
    }
    let gamma_components = two_variance_support_gamma(params)?;
    let mut bulks = Vec::new();
    for &(glo, ghi) in &gamma_components {
        let (rlo, rhi) = (r_of_gamma(glo, t), r_of_gamma(ghi, t));
        let grid = cosine_grid(rlo, rhi, points_per_component.max(8));
        let density = grid
            .iter()
            .map(|&r| {
                let gamma = gamma_of_r(r, t);
                Ok(push_gamma_density_to_r(
                    two_variance_density_gamma(params, gamma)?,
                    r,
                    t,
                ))
            })
            .collect::<Result<Vec<f64>>>()?;
        bulks.push(BulkComponent {
            support: (rlo, rhi),
            grid,
            density,
        });
    }
    let mut atoms = Vec::new();
    if params.alpha_m < 1.0 {
        atoms.push(Atom {
            location: -1.0,
            weight: 1.0 - params.alpha_m,
        });
    }
    Ok(SpectralDensity { bulks, atoms })
}

/// The `gamma`-space density as a [`SpectralDensity`] (bulks plus the zero
/// atom), used for moment checks and `gamma`-space exports.
pub fn two_variance_density_gamma_auto(
    params: &TwoVarianceParams,
    points_per_component: usize,
) -> Result<SpectralDensity> {
    let gamma_components = two_variance_support_gamma(params)?;
    let mut bulks = Vec::new();
    for &(glo, ghi) in &gamma_components {
        let grid = cosine_grid(glo, ghi, points_per_component.max(8));
        let density = grid
            .iter()
            .map(|&g| two_variance_density_gamma(params, g))
            .collect::<Result<Vec<f64>>>()?;
        bulks.push(BulkComponent {
            support: (glo, ghi),
            grid,
            density,
        });
    }
    let mut atoms = Vec::new();
    if params.alpha_m < 1.0 {
        atoms.push(Atom {
            location: 0.0,
            weight: 1.0 - params.alpha_m,
        });
    }
    Ok(SpectralDensity { bulks, atoms })
}

/// Expected ordered magnitudes of a `d`-dimensional spectrum drawn from the
/// measure: the magnitude quantile function sampled at `(j - 1/2)/d`,
/// `j = 1..d`, largest first. This is the analytic counterpart of the
/// ordered-singular-value plots used to read off manifold dimensionality.
pub fn cumulative_dimension_curve(density: &SpectralDensity, d: usize) -> Vec<f64> {
    (1..=d)
        .map(|j| density.magnitude_quantile(1.0 - (j as f64 - 0.5) / d as f64))
        .collect()
}

// --- quadrature -------------------------------------------------------------

/// Integrates `f` over `[a, b]` after the substitution
/// `x = mid + half sin(theta)`, which removes square-root edge behavior;
/// adaptive Simpson in `theta` to tolerance `tol`.
pub fn integrate_bulk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let g = |theta: f64| f(mid + half * theta.sin()) * half * theta.cos();
    adaptive_simpson(&g, -FRAC_PI_2, FRAC_PI_2, tol, 24)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

// --- cubic solver ------------------------------------------------------------

pub(crate) mod cubic {
    //! Complex cubic roots: closed-form Cardano with Newton polish and a
    //! Durand-Kerner fallback for near-degenerate discriminants.

    use num_complex::Complex64;

    /// All three roots of `c3 q^3 + c2 q^2 + c1 q + c0 = 0` (`c3 != 0`).
    pub fn solve(c3: Complex64, c2: Complex64, c1: Complex64, c0: Complex64) -> [Complex64; 3] {
        debug_assert!(c3.norm() > 0.0, "leading coefficient must be nonzero");
        let a = c2 / c3;
        let b = c1 / c3;
        let c = c0 / c3;
        let mut roots = cardano(a, b, c);
        let scale = 1.0 + a.norm().max(b.norm()).max(c.norm());
        let residual = |r: Complex64| ((r + a) * r + b) * r + c;
        let ok = roots
            .iter()
            .all(|&r| r.is_finite() && residual(r).norm() <= 1e-8 * scale);
        if !ok {
            roots = durand_kerner(a, b, c);
        }
        for r in roots.iter_mut() {
            *r = polish(*r, a, b, c);
        }
        roots
    }

    fn cardano(a: Complex64, b: Complex64, c: Complex64) -> [Complex64; 3] {
        // Depress: q = w - a/3.
        let shift = a / 3.0;
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
        let sq = disc.sqrt();
        // Take the branch with the larger magnitude to avoid cancellation.
        let s1 = -q / 2.0 + sq;
        let s2 = -q / 2.0 - sq;
        let s = if s1.norm() >= s2.norm() { s1 } else { s2 };
        if s.norm() == 0.0 {
            // Triple root of the depressed cubic at 0 (p == q == 0).
            return [-shift, -shift, -shift];
        }
        let u0 = s.cbrt();
        let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
        let mut roots = [Complex64::default(); 3];
        let mut u = u0;
        for root in roots.iter_mut() {
            *root = u - p / (3.0 * u) - shift;
            u *= omega;
        }
        roots
    }

    fn durand_kerner(a: Complex64, b: Complex64, c: Complex64) -> [Complex64; 3] {
        let poly = |x: Complex64| ((x + a) * x + b) * x + c;
        let seed = Complex64::new(0.4, 0.9);
        let scale = 1.0 + a.norm().max(b.norm()).max(c.norm());
        let mut xs = [
            seed * scale,
            seed * seed * scale,
            seed * seed * seed * scale,
        ];
        for _ in 0..200 {
            let mut max_step = 0.0f64;
            for i in 0..3 {
                let mut denom = Complex64::new(1.0, 0.0);
                for j in 0..3 {
                    if i != j {
                        denom *= xs[i] - xs[j];
                    }
                }
                if denom.norm() == 0.0 {
                    // Perturb coincident iterates.
                    xs[i] += Complex64::new(1e-8 * scale, 1e-8 * scale);
                    continue;
                }
                let step = poly(xs[i]) / denom;
                xs[i] -= step;
                max_step = max_step.max(step.norm());
            }
            if max_step < 1e-15 * scale {
                break;
            }
        }
        xs
    }

    fn polish(r: Complex64, a: Complex64, b: Complex64, c: Complex64) -> Complex64 {
        let mut x = r;
        for _ in 0..3 {
            let f = ((x + a) * x + b) * x + c;
            let df = (3.0 * x + 2.0 * a) * x + b;
            if df.norm() == 0.0 {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            x -= step;
        }
        x
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        fn assert_root_set(roots: &[Complex64; 3], expected: &[Complex64; 3], tol: f64) {
            for e in expected {
                assert!(
                    roots.iter().any(|r| (r - e).norm() < tol),
                    "expected root {e} not found in {roots:?}"
                );
            }
        }

        #[test]
        fn real_distinct_roots() {
            // (q - 1)(q - 2)(q - 3) = q^3 - 6 q^2 + 11 q - 6
            let roots = solve(
                Complex64::new(1.0, 0.0),
                Complex64::new(-6.0, 0.0),
                Complex64::new(11.0, 0.0),
                Complex64::new(-6.0, 0.0),
            );
            assert_root_set(
                &roots,
                &[
                    Complex64::new(1.0, 0.0),
                    Complex64::new(2.0, 0.0),
                    Complex64::new(3.0, 0.0),
                ],
                1e-10,
            );
        }

        #[test]
        fn repeated_root_near_degenerate_discriminant() {
            // (q - 1)^2 (q + 2) = q^3 - 3 q + 2
            let roots = solve(
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-3.0, 0.0),
                Complex64::new(2.0, 0.0),
            );
            assert_root_set(
                &roots,
                &[
                    Complex64::new(1.0, 0.0),
                    Complex64::new(1.0, 0.0),
                    Complex64::new(-2.0, 0.0),
                ],
                1e-6,
            );
        }

        #[test]
        fn complex_coefficients() {
            let rs = [
                Complex64::new(0.3, 0.7),
                Complex64::new(-1.2, 0.1),
                Complex64::new(2.0, -0.4),
            ];
            let c2 = -(rs[0] + rs[1] + rs[2]);
            let c1 = rs[0] * rs[1] + rs[0] * rs[2] + rs[1] * rs[2];
            let c0 = -rs[0] * rs[1] * rs[2];
            let roots = solve(Complex64::new(1.0, 0.0), c2, c1, c0);
            assert_root_set(&roots, &rs, 1e-9);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mp_bulk_mass_is_alpha() {
        for &(s2, a, t) in &[(1.0, 0.5, 1.0), (2.0, 0.25, 0.1), (1.0, 1.0, 10.0)] {
            let (rlo, rhi) = mp_wt_support(s2, a, t);
            let mass = integrate_bulk(
                |r| mp_density_wt(s2, a, t, r).unwrap(),
                rlo,
                rhi,
                1e-10,
            );
            assert_relative_eq!(mass, a, epsilon = 1e-6);
        }
    }

    #[test]
    fn mp_density_domain_checks() {
        assert!(mp_density_wt(1.0, 0.5, 1.0, -1.5).is_err());
        assert!(mp_density_wt(1.0, 0.5, 1.0, 0.5).is_err());
        assert!(mp_density_wt(1.0, 0.5, -1.0, -0.5).is_err());
        // Zero outside the support but inside [-1, 0].
        let (rlo, rhi) = mp_wt_support(1.0, 0.5, 1.0);
        assert_eq!(mp_density_wt(1.0, 0.5, 1.0, rlo - 1e-3).unwrap(), 0.0);
        assert_eq!(mp_density_wt(1.0, 0.5, 1.0, rhi + 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn mp_wt_edges_at_reference_point() {
        // sigma^2 = 1, alpha = 0.5, t = 1: the edge next to zero is
        // -t/(t + gamma_plus) with gamma_plus = (1 + sqrt 2)^2.
        let (rlo, rhi) = mp_wt_support(1.0, 0.5, 1.0);
        assert_relative_eq!(rhi, -1.0 / (1.0 + (1.0 + 2f64.sqrt()).powi(2)), epsilon = 1e-12);
        assert_relative_eq!(rhi, -0.14645, epsilon = 1e-5);
        assert_relative_eq!(rlo, -1.0 / (1.0 + (1.0 - 2f64.sqrt()).powi(2)), epsilon = 1e-12);
    }

    #[test]
    fn atom_weight_vanishes_at_alpha_one() {
        let d = single_variance_density_wt(1.0, 1.0, 1.0, 128).unwrap();
        assert!(d.atoms.is_empty());
        let d = single_variance_density_wt(1.0, 0.5, 1.0, 128).unwrap();
        assert_relative_eq!(d.atom_mass(), 0.5);
    }

    #[test]
    fn single_variance_density_total_mass() {
        let d = single_variance_density_wt(1.0, 0.5, 0.37, 3000).unwrap();
        assert_relative_eq!(d.total_mass(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn transform_round_trip() {
        let t = 0.7;
        for &gamma in &[0.2, 1.0, 4.2] {
            let r = r_of_gamma(gamma, t);
            assert_relative_eq!(gamma_of_r(r, t), gamma, epsilon = 1e-9, max_relative = 1e-12);
            let rho_g = mp_density_gamma(1.0, 0.5, gamma);
            let rho_r = push_gamma_density_to_r(rho_g, r, t);
            let back = push_r_density_to_gamma(rho_r, gamma, t);
            assert_relative_eq!(back, rho_g, epsilon = 1e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn two_variance_reduces_to_mp_when_variances_match() {
        let params = TwoVarianceParams::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let comps = two_variance_support_gamma(&params).unwrap();
        assert_eq!(comps.len(), 1);
        let (lo, hi) = comps[0];
        let (mlo, mhi) = mp_gamma_edges(1.0, 0.5);
        // Edge detection at threshold 1e-8 against the exact MP edges: the
        // density reaches 1e-8 a hair inside the true edge.
        assert_relative_eq!(lo, mlo, max_relative = 1e-4);
        assert_relative_eq!(hi, mhi, max_relative = 1e-4);
        // Pointwise agreement in the interior.
        for k in 1..40 {
            let g = mlo + (mhi - mlo) * k as f64 / 40.0;
            let solver = two_variance_density_gamma(&params, g).unwrap();
            let closed = mp_density_gamma(1.0, 0.5, g);
            assert_relative_eq!(solver, closed, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn two_variance_continuity_as_f_tends_to_one() {
        // f -> 1 at fixed sigma1: density tends to MP(sigma1) pointwise.
        let params = TwoVarianceParams::new(1.0, 0.5, 1.0 - 1e-6, 0.5).unwrap();
        let (mlo, mhi) = mp_gamma_edges(1.0, 0.5);
        let mut max_dev = 0.0f64;
        for k in 1..50 {
            let g = mlo + (mhi - mlo) * k as f64 / 50.0;
            let solver = two_variance_density_gamma(&params, g).unwrap();
            let closed = mp_density_gamma(1.0, 0.5, g);
            max_dev = max_dev.max((solver - closed).abs());
        }
        assert!(max_dev < 1e-3, "max deviation {max_dev}");
    }

    #[test]
    fn two_variance_density_nonnegative_on_grid() {
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        for k in 0..200 {
            let g = 1e-3 + k as f64 * 0.04;
            let sol =
                solve_two_variance_stieltjes(&params, Complex64::new(g, -1e-6)).unwrap();
            assert!(
                sol.q_star.im >= -1e-12,
                "negative branch imaginary part at gamma = {g}"
            );
            assert!(two_variance_density_gamma(&params, g).unwrap() >= 0.0);
        }
    }

    #[test]
    fn saddle_cubic_branch_and_discriminant_sign() {
        // Inside the support the real-z cubic has one real root plus a
        // conjugate pair (discriminant < 0) and exactly one root with
        // substantially positive imaginary part when approached from below;
        // outside, three real roots (discriminant > 0).
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        let comps = two_variance_support_gamma(&params).unwrap();
        let (s1, s2, f, a) = (1.0, 0.1, 0.5, 0.5);
        let real_cubic_discriminant = |z: f64| {
            let c3 = z;
            let c2 = (a - 1.0) - z * (a / s1) - z * (a / s2);
            let c1 = (z - (f * s1 + (1.0 - f) * s2)) * (a * a / (s1 * s2)) + a / s1 + a / s2;
            let c0 = -a * a / (s1 * s2);
            18.0 * c3 * c2 * c1 * c0 - 4.0 * c2.powi(3) * c0 + c2 * c2 * c1 * c1
                - 4.0 * c3 * c1.powi(3)
                - 27.0 * c3 * c3 * c0 * c0
        };
        let inside = [
            0.5 * (comps[0].0 + comps[0].1),
            0.5 * (comps[1].0 + comps[1].1),
        ];
        for &gamma in &inside {
            assert!(real_cubic_discriminant(gamma) < 0.0, "disc sign inside at {gamma}");
            let z = Complex64::new(gamma, -1e-9);
            let roots = cubic::solve(
                z,
                Complex64::from(a - 1.0) - z * (a / s1) - z * (a / s2),
                (z - Complex64::from(f * s1 + (1.0 - f) * s2)) * (a * a / (s1 * s2))
                    + Complex64::from(a / s1 + a / s2),
                Complex64::from(-a * a / (s1 * s2)),
            );
            let positive = roots.iter().filter(|r| r.im > 1e-6).count();
            assert_eq!(positive, 1, "expected one density-branch root at {gamma}");
        }
        let outside = [0.5 * (comps[0].1 + comps[1].0), comps[1].1 * 1.5];
        for &gamma in &outside {
            assert!(real_cubic_discriminant(gamma) > 0.0, "disc sign outside at {gamma}");
        }
    }

    #[test]
    fn stieltjes_rejects_real_argument() {
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        assert!(solve_two_variance_stieltjes(&params, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn two_variance_detects_disjoint_bulks() {
        // Parameters of the two-bulk reference figure.
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        let comps = two_variance_support_gamma(&params).unwrap();
        assert_eq!(comps.len(), 2, "expected two bulks, got {comps:?}");
        // Interior interval with vanishing density.
        let gap_lo = comps[0].1;
        let gap_hi = comps[1].0;
        assert!(gap_lo < gap_hi);
        let mid = 0.5 * (gap_lo + gap_hi);
        assert!(two_variance_density_gamma(&params, mid).unwrap() < SUPPORT_THRESHOLD);
    }

    #[test]
    fn two_variance_wt_mass() {
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        for &t in &[10.0, 0.1, 0.01] {
            let d = two_variance_density_wt_auto(&params, t, 2000).unwrap();
            assert_relative_eq!(d.total_mass(), 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn two_variance_first_moment() {
        let params = TwoVarianceParams::new(1.0, 0.1, 0.5, 0.5).unwrap();
        let d = two_variance_density_gamma_auto(&params, 4000).unwrap();
        let moment: f64 = d
            .bulks
            .iter()
            .map(|b| {
                trapezoid(
                    &b.grid,
                    &b.grid
                        .iter()
                        .zip(&b.density)
                        .map(|(&g, &rho)| g * rho)
                        .collect::<Vec<_>>(),
                )
            })
            .sum();
        assert_relative_eq!(moment, params.first_moment(), epsilon = 1e-3);
    }

    #[test]
    fn mixture_edges_reference_values() {
        let params = TwoVarianceParams::new(1.0, 0.01, 0.5, 0.5).unwrap();
        let (hi_lo, lo_hi) = mixture_approx_edges(&params);
        assert_relative_eq!(hi_lo, 0.5, epsilon = 1e-12);
        assert_relative_eq!(lo_hi, 0.045, epsilon = 1e-12);
        // t_max example downstream: sqrt(0.5 * 0.045) = 0.15.
        assert_relative_eq!((hi_lo * lo_hi).sqrt(), 0.15, epsilon = 1e-12);
    }

    #[test]
    fn mixture_edges_against_exact_support() {
        // Inner edges of the exact two-bulk support against the mixture
        // approximation at variance ratio 100: the high-bulk edge agrees to
        // ~1%, the low-bulk edge to ~17%.
        let params = TwoVarianceParams::new(1.0, 0.01, 0.5, 0.5).unwrap();
        let comps = two_variance_support_gamma(&params).unwrap();
        assert_eq!(comps.len(), 2);
        let (gamma_plus_hi, gamma_minus_lo) = mixture_approx_edges(&params);
        let exact_lo_hi = comps[0].1; // upper edge of the low bulk
        let exact_hi_lo = comps[1].0; // lower edge of the high bulk
        assert_relative_eq!(exact_hi_lo, gamma_plus_hi, max_relative = 0.05);
        assert_relative_eq!(exact_lo_hi, gamma_minus_lo, max_relative = 0.20);
    }

    #[test]
    fn mixture_edges_overlap_when_variances_equal() {
        let params = TwoVarianceParams::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let (hi_lo, lo_hi) = mixture_approx_edges(&params);
        // No gap: the "upper edge of the low bulk" exceeds the "lower edge
        // of the high bulk", so no intermediate gap report can be formed.
        assert!(hi_lo < lo_hi);
        assert!(crate::exact_score::intermediate_gap(hi_lo, lo_hi, 0.1, 0.5).is_err());
    }

    #[test]
    fn cumulative_curve_single_variance() {
        let d = single_variance_density_wt(1.0, 0.5, 1e-3, 2000).unwrap();
        let curve = cumulative_dimension_curve(&d, 100);
        assert_eq!(curve.iter().filter(|&&v| v == 1.0).count(), 50);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "curve not non-increasing");
        }
        for &v in &curve {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cumulative_curve_matches_finite_matrices() {
        use crate::exact_score::ExactScoreField;
        use crate::manifold_data::{sample_projection, VarianceProfile};
        let t = 1.0;
        let d = 100;
        let density = single_variance_density_wt(1.0, 0.5, t, 3000).unwrap();
        let curve = cumulative_dimension_curve(&density, d);
        let mut mean = vec![0.0f64; d];
        let seeds = 100;
        for seed in 0..seeds {
            let model =
                sample_projection(d, 50, &VarianceProfile::Single(1.0), seed).unwrap();
            let field = ExactScoreField::new(&model);
            let mags = field.jacobian_eigenvalues(t).unwrap().sorted_magnitudes();
            for (acc, v) in mean.iter_mut().zip(mags) {
                *acc += v / seeds as f64;
            }
        }
        // Compare away from the bulk edges where finite-size smearing peaks.
        let mut max_dev = 0.0f64;
        for j in 0..d {
            if (48..=52).contains(&j) || j >= d - 2 {
                continue;
            }
            max_dev = max_dev.max((curve[j] - mean[j]).abs());
        }
        assert!(max_dev < 0.03, "sup-norm deviation {max_dev}");
    }
}
