//! Shared configuration plumbing: error type, profile syntax, sweeps and
//! config-file overrides.

use diffusion_spectra::manifold_data::VarianceProfile;
use serde::de::DeserializeOwned;
use std::path::Path;

/// Current schema version of on-disk configs and reports.
pub const FORMAT_VERSION: u32 = 1;

/// A validation failure; mapped to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Parses `single:<s2>`, `two-block:<s1>,<s2>,<f>` or `per-dim:<v1>,...`.
pub fn parse_profile(spec: &str) -> Result<VarianceProfile, ConfigError> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| ConfigError(format!("profile '{spec}' missing ':' separator")))?;
    let values: Vec<f64> = rest
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("profile value '{v}' is not a number")))
        })
        .collect::<Result<_, _>>()?;
    match kind {
        "single" => {
            if values.len() != 1 {
                return config_err(format!("single profile expects 1 value, got {}", values.len()));
            }
            Ok(VarianceProfile::Single(values[0]))
        }
        "two-block" => {
            if values.len() != 3 {
                return config_err(format!(
                    "two-block profile expects sigma1^2,sigma2^2,fraction; got {} values",
                    values.len()
                ));
            }
            Ok(VarianceProfile::TwoBlock {
                sigma1_sq: values[0],
                sigma2_sq: values[1],
                fraction: values[2],
            })
        }
        "per-dim" => Ok(VarianceProfile::PerDimension(values)),
        other => config_err(format!(
            "unknown profile kind '{other}' (expected single, two-block or per-dim)"
        )),
    }
}

/// Parses a time sweep: either a comma list (`10,1,0.01`) or a log-spaced
/// range `lo..hi` with `points` samples (descending from `hi` to `lo`).
pub fn parse_time_sweep(spec: &str, points: usize) -> Result<Vec<f64>, ConfigError> {
    let parse_one = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| ConfigError(format!("time value '{v}' is not a number")))
    };
    let times: Vec<f64> = if let Some((lo, hi)) = spec.split_once("..") {
        let lo = parse_one(lo)?;
        let hi = parse_one(hi)?;
        if !(lo > 0.0 && hi > lo) {
            return config_err(format!("time range {lo}..{hi} must satisfy 0 < lo < hi"));
        }
        if points < 2 {
            return config_err("time range needs at least 2 points");
        }
        (0..points)
            .map(|k| hi * (lo / hi).powf(k as f64 / (points - 1) as f64))
            .collect()
    } else {
        spec.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(parse_one)
            .collect::<Result<_, _>>()?
    };
    if times.is_empty() {
        return config_err("empty time list");
    }
    if times.iter().any(|&t| t <= 0.0 || !t.is_finite()) {
        return config_err("all times must be positive and finite");
    }
    Ok(times)
}

/// Parses a comma list of positive integers.
pub fn parse_usize_list(spec: &str) -> Result<Vec<usize>, ConfigError> {
    let values: Vec<usize> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("count '{v}' is not a positive integer")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return config_err("empty count list");
    }
    if values.iter().any(|&n| n == 0) {
        return config_err("counts must be >= 1");
    }
    Ok(values)
}

/// Loads the JSON override file for a command, if given. Fields present in
/// the file replace the corresponding flag values.
pub fn load_overrides<T: DeserializeOwned>(path: Option<&Path>) -> Result<Option<T>, ConfigError> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("reading config {}: {e}", path.display())))?;
    let parsed = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("parsing config {}: {e}", path.display())))?;
    Ok(Some(parsed))
}

macro_rules! override_fields {
    ($target:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $src.$field { $target.$field = v; })*
    };
}
pub(crate) use override_fields;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_syntax() {
        assert!(matches!(
            parse_profile("single:1.0"),
            Ok(VarianceProfile::Single(v)) if v == 1.0
        ));
        assert!(matches!(
            parse_profile("two-block:1.0,0.01,0.75"),
            Ok(VarianceProfile::TwoBlock { .. })
        ));
        assert!(parse_profile("gaussian:1.0").is_err());
        assert!(parse_profile("single:abc").is_err());
    }

    #[test]
    fn sweep_syntax() {
        assert_eq!(parse_time_sweep("10,1,0.01", 0).unwrap(), vec![10.0, 1.0, 0.01]);
        let range = parse_time_sweep("1e-2..1.0", 3).unwrap();
        assert_eq!(range.len(), 3);
        assert!((range[0] - 1.0).abs() < 1e-12);
        assert!((range[2] - 1e-2).abs() < 1e-12);
        assert!(parse_time_sweep("", 0).is_err());
        assert!(parse_time_sweep("1,-2", 0).is_err());
    }
}
