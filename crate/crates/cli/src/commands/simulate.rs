//! `dspect simulate`: reverse-SDE integration with per-step diagnostics.

use anyhow::Result;
use clap::{Args as ClapArgs, ValueEnum};
use serde::{Deserialize, Serialize};

use diffusion_spectra::exact_score::ExactScoreField;
use diffusion_spectra::manifold_data::{sample_projection, VarianceProfile};
use diffusion_spectra::sde_sim::{reverse_sample, ReverseConfig, Schedule};

use super::Context;
use crate::config::{
    config_err, load_overrides, override_fields, parse_profile, ConfigError, FORMAT_VERSION,
};
use crate::fmt::CsvWriter;
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    Log,
    Uniform,
}

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 40)]
    m: usize,
    /// Variance profile of the latent subspaces.
    #[arg(long, default_value = "single:1.0")]
    profile: String,
    /// Euler-Maruyama steps.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 10.0)]
    t_f: f64,
    #[arg(long, default_value_t = 1e-4)]
    t_0: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Log)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Params {
    pub format_version: u32,
    pub d: usize,
    pub m: usize,
    pub profile: String,
    pub steps: usize,
    pub samples: usize,
    pub t_f: f64,
    pub t_0: f64,
    pub schedule: ScheduleArg,
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    d: Option<usize>,
    m: Option<usize>,
    profile: Option<String>,
    steps: Option<usize>,
    samples: Option<usize>,
    t_f: Option<f64>,
    t_0: Option<f64>,
    schedule: Option<ScheduleArg>,
    seed: Option<u64>,
}

fn resolve(args: Args, ctx: &Context) -> Result<Params, ConfigError> {
    let mut params = Params {
        format_version: FORMAT_VERSION,
        d: args.d,
        m: args.m,
        profile: args.profile,
        steps: args.steps,
        samples: args.samples,
        t_f: args.t_f,
        t_0: args.t_0,
        schedule: args.schedule,
        seed: args.seed,
    };
    if let Some(over) = load_overrides::<Overrides>(ctx.config.as_deref())? {
        override_fields!(
            params,
            over,
            [d, m, profile, steps, samples, t_f, t_0, schedule, seed]
        );
    }
    if params.d == 0 || params.m == 0 || params.m > params.d {
        return config_err(format!(
            "need 1 <= m <= d, got d = {}, m = {}",
            params.d, params.m
        ));
    }
    if params.steps == 0 {
        return config_err("--steps must be >= 1");
    }
    if params.samples == 0 {
        return config_err("--samples must be >= 1");
    }
    if !(params.t_f > params.t_0 && params.t_0 > 0.0) {
        return config_err(format!(
            "need t_f > t_0 > 0, got t_f = {}, t_0 = {}",
            params.t_f, params.t_0
        ));
    }
    let profile = parse_profile(&params.profile)?;
    profile
        .validate(params.m)
        .map_err(|e| ConfigError(e.to_string()))?;
    Ok(params)
}

pub fn entry(args: Args, ctx: &Context) -> Result<(), AppError> {
    let params = resolve(args, ctx)?;
    if ctx.dry_run {
        ctx.print_plan("simulate", &params, &["trajectory.csv"]);
        return Ok(());
    }
    execute(&params, ctx).map_err(AppError::Runtime)
}

fn execute(p: &Params, ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let profile = parse_profile(&p.profile).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let model = sample_projection(p.d, p.m, &profile, p.seed)?;
    let field = ExactScoreField::new(&model);
    let mut config = ReverseConfig::new(p.t_f, p.t_0, p.steps, p.samples, p.seed)
        .with_diagnostics(&model);
    config.schedule = match p.schedule {
        ScheduleArg::Log => Schedule::LogUniform,
        ScheduleArg::Uniform => Schedule::Uniform,
    };
    let record = reverse_sample(&field, &config)?;
    // Two-block profiles get one tangent-variance column per subspace
    // (tangent directions sorted by eigenvalue, the high-variance block
    // first); otherwise a single mean column.
    let n_tangent = record.tangent_variance.first().map_or(0, |v| v.len());
    let block_split = match &profile {
        VarianceProfile::TwoBlock {
            sigma1_sq,
            sigma2_sq,
            ..
        } => {
            let n1 = profile
                .column_variances(p.m)?
                .iter()
                .filter(|&&v| v == *sigma1_sq)
                .count();
            let big_first = sigma1_sq >= sigma2_sq;
            let split = if big_first { n1 } else { n_tangent.saturating_sub(n1) };
            Some(split)
        }
        _ => None,
    };
    let header: Vec<&str> = match block_split {
        Some(_) => vec![
            "t",
            "mean_orth_residual",
            "tangent_var_block1",
            "tangent_var_block2",
        ],
        None => vec!["t", "mean_orth_residual", "mean_tangent_variance"],
    };
    // One row per integration step (the state after each update).
    let mut csv = CsvWriter::create(&ctx.out_dir.join("trajectory.csv"), &header)?;
    let mean = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len().max(1) as f64;
    for k in 1..record.times.len() {
        let tangent = &record.tangent_variance[k];
        match block_split {
            Some(split) => {
                csv.row_f64(&[
                    record.times[k],
                    record.mean_orth_residual[k],
                    mean(&tangent[..split]),
                    mean(&tangent[split..]),
                ])?;
            }
            None => {
                csv.row_f64(&[record.times[k], record.mean_orth_residual[k], mean(tangent)])?;
            }
        }
    }
    csv.finish()?;
    Ok(())
}
