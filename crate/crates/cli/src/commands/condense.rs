//! `dspect condense`: condensation-time sweep over random positions,
//! emitting `(omega^2, t_c_exact, t_c_approx)` per position.

use anyhow::Result;
use clap::{Args as ClapArgs, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use diffusion_spectra::empirical_score::{condensation_time, TcMode};
use diffusion_spectra::manifold_data::{sample_projection, VarianceProfile};
use diffusion_spectra::rng::{normal_vector, stream_rng};

use super::Context;
use crate::config::{config_err, load_overrides, override_fields, ConfigError, FORMAT_VERSION};
use crate::fmt::CsvWriter;
use crate::AppError;

/// Where the per-dimension REM variances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceSource {
    /// `m` of `d` coordinates at `sigma2`, the rest zero.
    Aligned,
    /// Eigenvalues of a sampled random projection model.
    ModelEigenvalues,
}

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Data-abundance exponent `log(N)/d`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of random positions `x ~ N(0, I_d)`.
    #[arg(long, default_value_t = 2000)]
    positions: usize,
    /// Variance of the latent subspace.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, value_enum, default_value_t = VarianceSource::Aligned)]
    variance_source: VarianceSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Params {
    pub format_version: u32,
    pub d: usize,
    pub m: usize,
    pub alpha: f64,
    pub positions: usize,
    pub sigma2: f64,
    pub variance_source: VarianceSource,
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    d: Option<usize>,
    m: Option<usize>,
    alpha: Option<f64>,
    positions: Option<usize>,
    sigma2: Option<f64>,
    variance_source: Option<VarianceSource>,
    seed: Option<u64>,
}

fn resolve(args: Args, ctx: &Context) -> Result<Params, ConfigError> {
    let mut params = Params {
        format_version: FORMAT_VERSION,
        d: args.d,
        m: args.m,
        alpha: args.alpha.unwrap_or(f64::NAN),
        positions: args.positions,
        sigma2: args.sigma2,
        variance_source: args.variance_source,
        seed: args.seed,
    };
    if let Some(over) = load_overrides::<Overrides>(ctx.config.as_deref())? {
        override_fields!(
            params,
            over,
            [d, m, alpha, positions, sigma2, variance_source, seed]
        );
    }
    if params.d == 0 || params.m == 0 || params.m > params.d {
        return config_err(format!(
            "need 1 <= m <= d, got d = {}, m = {}",
            params.d, params.m
        ));
    }
    if !(params.alpha > 0.0) {
        return config_err("--alpha is required and must be > 0");
    }
    if params.positions == 0 {
        return config_err("--positions must be >= 1");
    }
    if params.sigma2 <= 0.0 {
        return config_err("--sigma2 must be > 0");
    }
    Ok(params)
}

pub fn entry(args: Args, ctx: &Context) -> Result<(), AppError> {
    let params = resolve(args, ctx)?;
    if ctx.dry_run {
        ctx.print_plan("condense", &params, &["condense.csv"]);
        return Ok(());
    }
    execute(&params, ctx).map_err(AppError::Runtime)
}

fn execute(p: &Params, ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let variances: Vec<f64> = match p.variance_source {
        VarianceSource::Aligned => {
            let mut v = vec![0.0; p.d];
            v[..p.m].fill(p.sigma2);
            v
        }
        VarianceSource::ModelEigenvalues => {
            let model =
                sample_projection(p.d, p.m, &VarianceProfile::Single(p.sigma2), p.seed)?;
            model.gammas().iter().cloned().collect()
        }
    };
    let rows: Vec<[f64; 3]> = (0..p.positions as u64)
        .into_par_iter()
        .map(|k| {
            let x: Vec<f64> = normal_vector(p.d, &mut stream_rng(p.seed, 10_000 + k))
                .iter()
                .cloned()
                .collect();
            let report = condensation_time(&variances, &x, p.alpha, TcMode::Exact)?;
            Ok([
                report.omega_sq,
                report.t_c_exact.expect("exact mode fills t_c_exact"),
                report.t_c_approx,
            ])
        })
        .collect::<diffusion_spectra::Result<_>>()?;
    let mut csv = CsvWriter::create(
        &ctx.out_dir.join("condense.csv"),
        &["omega2", "t_c_exact", "t_c_approx"],
    )?;
    for row in &rows {
        csv.row_f64(row)?;
    }
    csv.finish()?;
    Ok(())
}
