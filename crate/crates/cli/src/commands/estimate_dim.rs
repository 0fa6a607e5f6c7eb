//! `dspect estimate-dim`: intrinsic-dimension sweeps over diffusion time
//! and dataset size, with per-configuration sorted singular values.

use anyhow::Result;
use clap::{Args as ClapArgs, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use diffusion_spectra::dim_estimator::{
    detect_dimension, estimate_singular_values, Variant,
};
use diffusion_spectra::empirical_score::EmpiricalScoreField;
use diffusion_spectra::exact_score::ExactScoreField;
use diffusion_spectra::manifold_data::{sample_dataset, sample_projection, Geometry};
use diffusion_spectra::rng::derive_seed;
use diffusion_spectra::stats::mean_sem;
use diffusion_spectra::ScoreField;

use super::Context;
use crate::config::{
    config_err, load_overrides, override_fields, parse_profile, parse_time_sweep, parse_usize_list,
    ConfigError, FORMAT_VERSION,
};
use crate::fmt::{fmt_f64, CsvWriter};
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Exact,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Forward,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasePoint {
    /// The origin of the ambient space.
    Origin,
    /// The first dataset point (empirical score only).
    Data,
}

#[derive(ClapArgs)]
pub struct Args {
    /// Which score field to probe.
    #[arg(long, value_enum)]
    score: Option<ScoreKind>,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 40)]
    m: usize,
    /// Variance profile: `single:<s2>`, `two-block:<s1>,<s2>,<f>` or
    /// `per-dim:<v1>,...`.
    #[arg(long, default_value = "single:1.0")]
    profile: String,
    /// Probe times: comma list or log range `lo..hi`.
    #[arg(long, default_value = "1e-3")]
    t_sweep: String,
    /// Points of a `lo..hi` time range.
    #[arg(long, default_value_t = 10)]
    t_points: usize,
    /// Dataset sizes (empirical score only).
    #[arg(long, default_value = "1000")]
    n_sweep: String,
    #[arg(long, default_value_t = 5.0)]
    threshold_factor: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Forward)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = BasePoint::Origin)]
    base_point: BasePoint,
    /// Independent noise repeats per configuration.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Params {
    pub format_version: u32,
    pub score: ScoreKind,
    pub d: usize,
    pub m: usize,
    pub profile: String,
    pub times: Vec<f64>,
    pub n_sweep: Vec<usize>,
    pub threshold_factor: f64,
    pub variant: VariantArg,
    pub base_point: BasePoint,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    score: Option<ScoreKind>,
    d: Option<usize>,
    m: Option<usize>,
    profile: Option<String>,
    times: Option<Vec<f64>>,
    n_sweep: Option<Vec<usize>>,
    threshold_factor: Option<f64>,
    variant: Option<VariantArg>,
    base_point: Option<BasePoint>,
    repeats: Option<usize>,
    seed: Option<u64>,
}

fn resolve(args: Args, ctx: &Context) -> Result<Params, ConfigError> {
    let mut score = args.score;
    let mut params = Params {
        format_version: FORMAT_VERSION,
        score: ScoreKind::Exact, // placeholder until `score` is resolved
        d: args.d,
        m: args.m,
        profile: args.profile,
        times: parse_time_sweep(&args.t_sweep, args.t_points)?,
        n_sweep: parse_usize_list(&args.n_sweep)?,
        threshold_factor: args.threshold_factor,
        variant: args.variant,
        base_point: args.base_point,
        repeats: args.repeats,
        seed: args.seed,
    };
    if let Some(over) = load_overrides::<Overrides>(ctx.config.as_deref())? {
        if over.score.is_some() {
            score = over.score;
        }
        override_fields!(
            params,
            over,
            [d, m, profile, times, n_sweep, threshold_factor, variant, base_point, repeats, seed]
        );
    }
    params.score = match score {
        Some(s) => s,
        None => return config_err("--score is required (exact or empirical)"),
    };
    if params.d < 2 || params.m == 0 || params.m > params.d {
        return config_err(format!(
            "need 2 <= d and 1 <= m <= d, got d = {}, m = {}",
            params.d, params.m
        ));
    }
    let profile = parse_profile(&params.profile)?;
    profile
        .validate(params.m)
        .map_err(|e| ConfigError(e.to_string()))?;
    if params.threshold_factor <= 0.0 {
        return config_err("--threshold-factor must be > 0");
    }
    if params.repeats == 0 {
        return config_err("--repeats must be >= 1");
    }
    if params.base_point == BasePoint::Data && params.score == ScoreKind::Exact {
        return config_err("--base-point data requires --score empirical");
    }
    Ok(params)
}

pub fn entry(args: Args, ctx: &Context) -> Result<(), AppError> {
    let params = resolve(args, ctx)?;
    if ctx.dry_run {
        ctx.print_plan("estimate-dim", &params, &["summary.csv", "svs_t<i>_n<N>.csv"]);
        return Ok(());
    }
    execute(&params, ctx).map_err(AppError::Runtime)
}

fn to_variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Forward => Variant::Forward,
        VariantArg::Central => Variant::CentralDifference,
    }
}

fn execute(p: &Params, ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let profile = parse_profile(&p.profile).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let model = sample_projection(p.d, p.m, &profile, p.seed)?;
    let variant = to_variant(p.variant);
    // The exact score ignores N; normalize its sweep to a single slot,
    // reported as n = 0.
    let n_slots: Vec<usize> = match p.score {
        ScoreKind::Exact => vec![0],
        ScoreKind::Empirical => p.n_sweep.clone(),
    };
    let mut summary = CsvWriter::create(
        &ctx.out_dir.join("summary.csv"),
        &["t", "n", "dim_mean", "dim_sem", "detected", "repeats"],
    )?;
    for (ni, &n) in n_slots.iter().enumerate() {
        // One dataset per (seed, n); the exact branch needs none.
        let dataset = match p.score {
            ScoreKind::Exact => None,
            ScoreKind::Empirical => Some(sample_dataset(
                &model,
                n,
                Geometry::Linear,
                derive_seed(p.seed, 500 + ni as u64),
            )?),
        };
        let field_exact;
        let field_empirical;
        let field: &dyn ScoreField = match &dataset {
            None => {
                field_exact = ExactScoreField::new(&model);
                &field_exact
            }
            Some(ds) => {
                field_empirical = EmpiricalScoreField::new(ds)?;
                &field_empirical
            }
        };
        let x0 = match (p.base_point, &dataset) {
            (BasePoint::Data, Some(ds)) => ds.point(0),
            _ => DVector::zeros(p.d),
        };
        for (ti, &t) in p.times.iter().enumerate() {
            let mut dims = Vec::new();
            let mut first_estimate = None;
            for rep in 0..p.repeats {
                let est_seed = derive_seed(p.seed, (ni * p.times.len() + ti) as u64 * 1000 + rep as u64);
                let est = estimate_singular_values(field, &x0, t, variant, est_seed)?;
                if let Some(dim) = detect_dimension(&est, p.threshold_factor)?.dimension() {
                    dims.push(dim as f64);
                }
                if rep == 0 {
                    first_estimate = Some(est);
                }
            }
            // Sorted normalized singular values of the first repeat.
            let est = first_estimate.expect("repeats >= 1");
            let mut svs = CsvWriter::create(
                &ctx.out_dir.join(format!("svs_t{ti:03}_n{n:06}.csv")),
                &["index", "normalized_sv"],
            )?;
            for (idx, &v) in est.singular_values.iter().enumerate() {
                svs.row(&[idx.to_string(), fmt_f64(v)])?;
            }
            svs.finish()?;
            let (dim_mean, dim_sem) = if dims.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_sem(&dims)
            };
            summary.row(&[
                fmt_f64(t),
                n.to_string(),
                fmt_f64(dim_mean),
                fmt_f64(dim_sem),
                dims.len().to_string(),
                p.repeats.to_string(),
            ])?;
        }
    }
    summary.finish()?;
    Ok(())
}
