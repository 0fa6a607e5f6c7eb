//! `dspect spectrum`: analytic densities of `W_t` next to pooled
//! finite-matrix eigenvalues, plus support edges and characteristic times.

use anyhow::Result;
use clap::Args as ClapArgs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use diffusion_spectra::exact_score::ExactScoreField;
use diffusion_spectra::manifold_data::{sample_projection, VarianceProfile};
use diffusion_spectra::rmt_spectra::{
    mixture_approx_edges, single_variance_density_wt, two_variance_density_wt_auto,
    SpectralDensity, TwoVarianceParams,
};
use diffusion_spectra::rng::derive_seed;

use super::Context;
use crate::config::{
    config_err, load_overrides, override_fields, parse_time_sweep, ConfigError, FORMAT_VERSION,
};
use crate::fmt::CsvWriter;
use crate::AppError;

#[derive(ClapArgs)]
pub struct Args {
    /// Ambient dimension.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Latent dimension.
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Single-subspace variance (mutually exclusive with --two-variance).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Two-subspace variances as `sigma1^2,sigma2^2`.
    #[arg(long, value_name = "S1,S2")]
    two_variance: Option<String>,
    /// Fraction of latent columns carrying sigma1^2 (with --two-variance).
    #[arg(long)]
    f: Option<f64>,
    /// Diffusion times: comma list or log range `lo..hi`.
    #[arg(long, default_value = "10,1,0.01")]
    t: String,
    /// Points of a `lo..hi` time range.
    #[arg(long, default_value_t = 10)]
    t_points: usize,
    /// Finite-matrix realizations pooled into the empirical spectrum.
    #[arg(long, default_value_t = 100)]
    realizations: usize,
    /// Grid points per analytic bulk component.
    #[arg(long, default_value_t = 2048)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Params {
    pub format_version: u32,
    pub d: usize,
    pub m: usize,
    pub sigma2: Option<f64>,
    pub two_variance: Option<(f64, f64)>,
    pub f: Option<f64>,
    pub times: Vec<f64>,
    pub realizations: usize,
    pub grid: usize,
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    d: Option<usize>,
    m: Option<usize>,
    sigma2: Option<f64>,
    two_variance: Option<(f64, f64)>,
    f: Option<f64>,
    times: Option<Vec<f64>>,
    realizations: Option<usize>,
    grid: Option<usize>,
    seed: Option<u64>,
}

fn resolve(args: Args, ctx: &Context) -> Result<Params, ConfigError> {
    let two_variance = match &args.two_variance {
        None => None,
        Some(spec) => {
            let parts: Vec<&str> = spec.split(',').collect();
            if parts.len() != 2 {
                return config_err("--two-variance expects exactly two values `s1,s2`");
            }
            let s1 = parts[0]
                .trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("bad variance '{}'", parts[0])))?;
            let s2 = parts[1]
                .trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("bad variance '{}'", parts[1])))?;
            Some((s1, s2))
        }
    };
    let mut params = Params {
        format_version: FORMAT_VERSION,
        d: args.d,
        m: args.m,
        sigma2: args.sigma2,
        two_variance,
        f: args.f,
        times: parse_time_sweep(&args.t, args.t_points)?,
        realizations: args.realizations,
        grid: args.grid,
        seed: args.seed,
    };
    if let Some(over) = load_overrides::<Overrides>(ctx.config.as_deref())? {
        override_fields!(params, over, [d, m, times, realizations, grid, seed]);
        if over.f.is_some() {
            params.f = over.f;
        }
        if over.sigma2.is_some() {
            params.sigma2 = over.sigma2;
        }
        if over.two_variance.is_some() {
            params.two_variance = over.two_variance;
        }
    }
    validate(&params)?;
    Ok(params)
}

fn validate(p: &Params) -> Result<(), ConfigError> {
    if p.d == 0 || p.m == 0 || p.m > p.d {
        return config_err(format!("need 1 <= m <= d, got d = {}, m = {}", p.d, p.m));
    }
    if p.times.is_empty() {
        return config_err("empty time list");
    }
    if p.realizations == 0 {
        return config_err("--realizations must be >= 1");
    }
    match (p.sigma2, p.two_variance) {
        (Some(_), Some(_)) => config_err("--sigma2 and --two-variance are mutually exclusive"),
        (None, None) => config_err("one of --sigma2 or --two-variance is required"),
        (Some(s2), None) if s2 <= 0.0 => config_err("--sigma2 must be > 0"),
        (None, Some(_)) if p.f.is_none() => config_err("--two-variance requires --f"),
        _ => Ok(()),
    }
}

fn profile(p: &Params) -> VarianceProfile {
    match (p.sigma2, p.two_variance) {
        (Some(s2), None) => VarianceProfile::Single(s2),
        (None, Some((s1, s2))) => VarianceProfile::TwoBlock {
            sigma1_sq: s1,
            sigma2_sq: s2,
            fraction: p.f.unwrap(),
        },
        _ => unreachable!("validated"),
    }
}

fn analytic_density(p: &Params, t: f64) -> Result<SpectralDensity> {
    let alpha_m = p.m as f64 / p.d as f64;
    Ok(match (p.sigma2, p.two_variance) {
        (Some(s2), None) => single_variance_density_wt(s2, alpha_m, t, p.grid)?,
        (None, Some((s1, s2))) => {
            let params = TwoVarianceParams::new(s1, s2, p.f.unwrap(), alpha_m)?;
            two_variance_density_wt_auto(&params, t, p.grid)?
        }
        _ => unreachable!("validated"),
    })
}

pub fn entry(args: Args, ctx: &Context) -> Result<(), AppError> {
    let params = resolve(args, ctx)?;
    let outputs = ["spectrum_analytic.csv", "spectrum_empirical.csv", "edges.json"];
    if ctx.dry_run {
        ctx.print_plan("spectrum", &params, &outputs);
        return Ok(());
    }
    execute(&params, ctx).map_err(AppError::Runtime)
}

fn execute(p: &Params, ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let alpha_m = p.m as f64 / p.d as f64;

    // Analytic densities and edge report.
    let mut analytic = CsvWriter::create(&ctx.out_dir.join("spectrum_analytic.csv"), &["t", "r", "density"])?;
    let mut edges_per_t = Vec::new();
    for &t in &p.times {
        let density = analytic_density(p, t)?;
        for bulk in &density.bulks {
            for (&r, &rho) in bulk.grid.iter().zip(&bulk.density) {
                analytic.row_f64(&[t, r, rho])?;
            }
        }
        edges_per_t.push(serde_json::json!({
            "t": t,
            "atoms": density.atoms,
            "bulks": density.bulks.iter().map(|b| serde_json::json!({
                "lo": b.support.0,
                "hi": b.support.1,
                "mass": b.mass(),
            })).collect::<Vec<_>>(),
            "total_mass": density.total_mass(),
        }));
    }
    analytic.finish()?;

    // Pooled finite-matrix eigenvalues of the dimensionless W_t.
    let profile = profile(p);
    let spectra: Vec<Vec<(f64, Vec<f64>)>> = (0..p.realizations as u64)
        .into_par_iter()
        .map(|k| {
            let model = sample_projection(p.d, p.m, &profile, derive_seed(p.seed, k))?;
            let field = ExactScoreField::new(&model);
            p.times
                .iter()
                .map(|&t| Ok((t, field.jacobian_eigenvalues(t)?.values)))
                .collect::<diffusion_spectra::Result<Vec<_>>>()
        })
        .collect::<diffusion_spectra::Result<_>>()?;
    let mut empirical =
        CsvWriter::create(&ctx.out_dir.join("spectrum_empirical.csv"), &["t", "eigenvalue"])?;
    for per_seed in &spectra {
        for (t, values) in per_seed {
            for &v in values {
                empirical.row_f64(&[*t, v])?;
            }
        }
    }
    empirical.finish()?;

    // Edge metadata, including the mixture approximation when applicable.
    let mut doc = serde_json::json!({
        "format_version": p.format_version,
        "alpha_m": alpha_m,
        "per_t": edges_per_t,
    });
    if let (None, Some((s1, s2))) = (p.sigma2, p.two_variance) {
        let tv = TwoVarianceParams::new(s1, s2, p.f.unwrap(), alpha_m)?;
        let (gamma_plus_hi, gamma_minus_lo) = mixture_approx_edges(&tv);
        let mut mixture = serde_json::json!({
            "gamma_plus_hi": gamma_plus_hi,
            "gamma_minus_lo": gamma_minus_lo,
        });
        if gamma_minus_lo < gamma_plus_hi {
            mixture["t_max"] = serde_json::json!((gamma_plus_hi * gamma_minus_lo).sqrt());
        }
        doc["mixture_approximation"] = mixture;
    }
    std::fs::write(
        ctx.out_dir.join("edges.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    Ok(())
}
