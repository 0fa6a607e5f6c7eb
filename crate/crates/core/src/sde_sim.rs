//! Forward and backward variance-exploding diffusion with pluggable scores.
//!
//! The forward process is pure Brownian motion, so the noised state is
//! available in closed form: `x_t = x_0 + sqrt(t) eps`. The reverse process
//! `dx = -s(x, t) dt + dZ`, integrated backward from `x_{t_f} ~ N(0, t_f I)`
//! with Euler-Maruyama steps, carries samples through the trivial, coverage
//! and consolidation phases down to `t_0`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold_data::LinearManifoldModel;
use crate::rng::{normal_vector, stream_rng};
use crate::score::ScoreField;

/// Spacing of the integration times between `t_f` and `t_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Constant ratio between consecutive times; the default, since the
    /// geometric phases span decades of `t`.
    LogUniform,
    /// Constant difference between consecutive times.
    Uniform,
}

/// Configuration of a reverse-diffusion run.
#[derive(Debug, Clone)]
pub struct ReverseConfig<'m> {
    pub t_f: f64,
    pub t_0: f64,
    /// Number of Euler-Maruyama steps.
    pub steps: usize,
    pub n_samples: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// With `false` the injected noise is dropped, leaving the
    /// deterministic gradient flow (a diagnostic mode).
    pub noise: bool,
    /// Model against which orthogonal residuals and tangent variances are
    /// recorded; without it those diagnostics are skipped.
    pub diagnostics_model: Option<&'m LinearManifoldModel>,
    /// Overrides the `N(0, t_f I)` initialization when set.
    pub initial_states: Option<Vec<DVector<f64>>>,
}

impl<'m> ReverseConfig<'m> {
    pub fn new(t_f: f64, t_0: f64, steps: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            t_f,
            t_0,
            steps,
            n_samples,
            schedule: Schedule::LogUniform,
            seed,
            noise: true,
            diagnostics_model: None,
            initial_states: None,
        }
    }

    pub fn with_diagnostics(mut self, model: &'m LinearManifoldModel) -> Self {
        self.diagnostics_model = Some(model);
        self
    }
}

/// Recorded trajectory statistics of a reverse run.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Integration times, strictly decreasing from `t_f` to `t_0`
    /// (`steps + 1` entries).
    pub times: Vec<f64>,
    /// Mean over samples of `||(I - Pi) x||` at each time; empty without a
    /// diagnostics model.
    pub mean_orth_residual: Vec<f64>,
    /// Per-time sample variance of the coordinate along each tangent
    /// eigendirection (eigenvalues of `F F^T` descending); empty without a
    /// diagnostics model.
    pub tangent_variance: Vec<Vec<f64>>,
    /// Final states at `t_0`, one per sample.
    pub terminal_states: Vec<DVector<f64>>,
}

/// Noises a state forward by time `t`: `x_t = x_0 + sqrt(t) eps`, exact
/// (no discretization).
pub fn forward_sample(x0: &DVector<f64>, t: f64, seed: u64) -> Result<DVector<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::Time(t));
    }
    if t == 0.0 {
        return Ok(x0.clone());
    }
    let eps = normal_vector(x0.len(), &mut stream_rng(seed, 5));
    Ok(x0 + eps * t.sqrt())
}

/// Integration times from `t_f` down to `t_0`.
fn time_grid(t_f: f64, t_0: f64, steps: usize, schedule: Schedule) -> Vec<f64> {
    let n = steps + 1;
    match schedule {
        Schedule::LogUniform => {
            let ratio = t_0 / t_f;
            (0..n)
                .map(|k| t_f * ratio.powf(k as f64 / steps as f64))
                .collect()
        }
        Schedule::Uniform => (0..n)
            .map(|k| t_f + (t_0 - t_f) * k as f64 / steps as f64)
            .collect(),
    }
}

/// Samples the reverse SDE with the given score field.
///
/// Samples are independent, integrated in parallel, each from its own
/// `(seed, sample)` noise stream; the aggregation order is fixed, so the
/// output is deterministic. Non-finite states abort with the offending
/// step and time in the error (the exact score is globally Lipschitz at
/// fixed `t`, so blow-up indicates a step size too large for the field).
pub fn reverse_sample<S: ScoreField + ?Sized>(
    score: &S,
    config: &ReverseConfig,
) -> Result<TrajectoryRecord> {
    if !(config.t_f > config.t_0 && config.t_0 > 0.0) {
        return Err(Error::Domain(format!(
            "need t_f > t_0 > 0, got t_f = {}, t_0 = {}",
            config.t_f, config.t_0
        )));
    }
    if config.steps == 0 {
        return Err(Error::Domain("steps must be >= 1".into()));
    }
    if config.n_samples == 0 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    if let Some(init) = &config.initial_states {
        if init.len() != config.n_samples {
            return Err(Error::Dimension(format!(
                "{} initial states for {} samples",
                init.len(),
                config.n_samples
            )));
        }
    }
    let d = score.dim();
    let times = time_grid(config.t_f, config.t_0, config.steps, config.schedule);
    let n_times = times.len();

    // Diagnostics projections.
    let diag = config.diagnostics_model.map(|model| {
        let tangent: Vec<usize> = (0..model.d).filter(|&j| model.gammas()[j] > 0.0).collect();
        let basis: Vec<DVector<f64>> = tangent
            .iter()
            .map(|&j| model.eigen.eigenvectors.column(j).into_owned())
            .collect();
        basis
    });

    struct ChunkStats {
        res_sum: Vec<f64>,
        coord_sum: Vec<Vec<f64>>,
        coord_sq_sum: Vec<Vec<f64>>,
        terminals: Vec<DVector<f64>>,
    }

    let chunk_size = 64usize;
    let n_chunks = config.n_samples.div_ceil(chunk_size);
    let chunk_results: Vec<Result<ChunkStats>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * chunk_size;
            let hi = ((chunk + 1) * chunk_size).min(config.n_samples);
            let n_tangent = diag.as_ref().map_or(0, |b| b.len());
            let mut stats = ChunkStats {
                res_sum: vec![0.0; if diag.is_some() { n_times } else { 0 }],
                coord_sum: vec![vec![0.0; n_tangent]; if diag.is_some() { n_times } else { 0 }],
                coord_sq_sum: vec![vec![0.0; n_tangent]; if diag.is_some() { n_times } else { 0 }],
                terminals: Vec::with_capacity(hi - lo),
            };
            for sample in lo..hi {
                let mut rng = stream_rng(config.seed, 1_000_000 + sample as u64);
                let mut x = match &config.initial_states {
                    Some(init) => init[sample].clone(),
                    None => normal_vector(d, &mut rng) * config.t_f.sqrt(),
                };
                for (k, &t) in times.iter().enumerate() {
                    if let Some(basis) = &diag {
                        record(&mut stats, k, &x, basis);
                    }
                    if k == config.steps {
                        break;
                    }
                    let dt = t - times[k + 1];
                    let s = score.score(&x, t)?;
                    x += s * dt;
                    if config.noise {
                        x += normal_vector(d, &mut rng) * dt.sqrt();
                    }
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!(
                            "sample {sample} diverged at step {k} (t = {t}); \
                             the step size is too large for this score field"
                        )));
                    }
                }
                stats.terminals.push(x);
            }
            Ok(stats)
        })
        .collect();

    fn record(stats: &mut ChunkStats, k: usize, x: &DVector<f64>, basis: &[DVector<f64>]) {
        let mut residual_sq = x.norm_squared();
        for (j, v) in basis.iter().enumerate() {
            let c = v.dot(x);
            stats.coord_sum[k][j] += c;
            stats.coord_sq_sum[k][j] += c * c;
            residual_sq -= c * c;
        }
        stats.res_sum[k] += residual_sq.max(0.0).sqrt();
    }

    // Deterministic in-order merge.
    let mut terminal_states = Vec::with_capacity(config.n_samples);
    let with_diag = diag.is_some();
    let n_tangent = diag.as_ref().map_or(0, |b| b.len());
    let mut res_sum = vec![0.0; if with_diag { n_times } else { 0 }];
    let mut coord_sum = vec![vec![0.0; n_tangent]; if with_diag { n_times } else { 0 }];
    let mut coord_sq_sum = vec![vec![0.0; n_tangent]; if with_diag { n_times } else { 0 }];
    for chunk in chunk_results {
        let stats = chunk?;
        for (k, v) in stats.res_sum.iter().enumerate() {
            res_sum[k] += v;
        }
        for (k, row) in stats.coord_sum.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                coord_sum[k][j] += v;
            }
        }
        for (k, row) in stats.coord_sq_sum.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                coord_sq_sum[k][j] += v;
            }
        }
        terminal_states.extend(stats.terminals);
    }
    let n = config.n_samples as f64;
    let mean_orth_residual: Vec<f64> = res_sum.iter().map(|v| v / n).collect();
    let tangent_variance: Vec<Vec<f64>> = coord_sum
        .iter()
        .zip(&coord_sq_sum)
        .map(|(sums, sqs)| {
            sums.iter()
                .zip(sqs)
                .map(|(&s, &sq)| (sq / n - (s / n) * (s / n)).max(0.0))
                .collect()
        })
        .collect();

    Ok(TrajectoryRecord {
        times,
        mean_orth_residual,
        tangent_variance,
        terminal_states,
    })
}
