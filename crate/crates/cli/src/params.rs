//! Command parameters, shared by the flags and the JSON config file. A flag
//! wins over the file; the seed additionally falls back to
//! `ERASURE_REGRET_SEED` before the built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use erasure_regret::sweep::{int_grid, real_grid, Strategy};
use erasure_regret::{ErrorModel, Schedule};

use crate::CliError;

pub const SEED_ENV: &str = "ERASURE_REGRET_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Erasure probability
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Blocklength for `bounds`
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Horizon
    #[arg(long = "T", global = true)]
    #[serde(rename = "T")]
    pub horizon: Option<u64>,
    /// Estimation length
    #[arg(long = "Te", global = true)]
    #[serde(rename = "Te")]
    pub te: Option<u64>,
    #[arg(long, global = true)]
    pub backoff: Option<f64>,
    /// Operating error probability in (0, 0.5]
    #[arg(long, global = true)]
    pub eeff: Option<f64>,
    /// Block count of a geometric schedule
    #[arg(long = "M", global = true)]
    #[serde(rename = "M")]
    pub m: Option<u32>,
    /// geometric:M, arithmetic:T,M or custom:T1,T2,...
    #[arg(long, global = true)]
    pub schedule: Option<String>,
    /// Monte Carlo trials
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// step, ppv_upper, ppv_lower or ppv_mid
    #[arg(long = "error-model", global = true)]
    #[serde(rename = "error_model")]
    pub error_model: Option<String>,
    /// lo:hi:step
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Comma-separated horizons for the Te* sweep
    #[arg(long, global = true)]
    pub horizons: Option<String>,
    /// Comma-separated subset of ett_opt, geometric, arithmetic
    #[arg(long, global = true)]
    pub strategies: Option<String>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Output file; stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($flags:ident, $file:ident, $($field:ident),+) => {
        Params { $($field: $flags.$field.or($file.$field)),+ }
    };
}

impl Params {
    /// Fills every unset flag from `file`.
    pub fn or(self, file: Params) -> Params {
        let flags = self;
        overlay!(
            flags,
            file,
            delta,
            n,
            horizon,
            te,
            backoff,
            eeff,
            m,
            schedule,
            trials,
            seed,
            error_model,
            grid,
            horizons,
            strategies,
            format,
            out
        )
    }

    pub fn load(path: &Path) -> Result<Params, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn delta_or_default(&self) -> f64 {
        self.delta.unwrap_or(0.5)
    }

    pub fn eeff_or_default(&self) -> f64 {
        self.eeff.unwrap_or(0.5)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    pub fn require<T: Copy>(value: Option<T>, flag: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        if let Some(seed) = self.seed {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    pub fn error_model(&self) -> Result<ErrorModel, CliError> {
        self.error_model
            .as_deref()
            .map_or(Ok(ErrorModel::Step), |s| s.parse().map_err(CliError::from))
    }

    /// The schedule from `--schedule`, or geometric from `--M`.
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        match (&self.schedule, self.m) {
            (Some(_), Some(_)) => Err(CliError::Usage("give either --schedule or --M, not both".into())),
            (Some(spec), None) => spec.parse().map_err(CliError::from),
            (None, Some(m)) => Ok(erasure_regret::windowing::make_geometric(m)?),
            (None, None) => Err(CliError::Usage("missing --schedule (or --M for geometric)".into())),
        }
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>, CliError> {
        match &self.strategies {
            None => Ok(Strategy::ALL.to_vec()),
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse().map_err(CliError::from))
                .collect(),
        }
    }

    pub fn horizons(&self) -> Result<Vec<u64>, CliError> {
        match &self.horizons {
            None => Ok(vec![1_000, 10_000, 100_000, 1_000_000]),
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad horizon '{s}' in --horizons")))
                })
                .collect(),
        }
    }

    pub fn real_grid(&self, default: (f64, f64, f64)) -> Result<Vec<f64>, CliError> {
        let (lo, hi, step) = match &self.grid {
            None => default,
            Some(g) => {
                let [lo, hi, step] = split_grid(g)?;
                (parse_num(g, lo)?, parse_num(g, hi)?, parse_num(g, step)?)
            }
        };
        Ok(real_grid(lo, hi, step)?)
    }

    pub fn int_grid(&self, default: (u64, u64, u64)) -> Result<Vec<u64>, CliError> {
        let (lo, hi, step) = match &self.grid {
            None => default,
            Some(g) => {
                let [lo, hi, step] = split_grid(g)?;
                (parse_num(g, lo)?, parse_num(g, hi)?, parse_num(g, step)?)
            }
        };
        Ok(int_grid(lo, hi, step)?)
    }
}

fn split_grid(g: &str) -> Result<[&str; 3], CliError> {
    let parts: Vec<&str> = g.split(':').collect();
    <[&str; 3]>::try_from(parts).map_err(|_| CliError::Usage(format!("grid '{g}' must look like lo:hi:step")))
}

fn parse_num<T: std::str::FromStr>(grid: &str, token: &str) -> Result<T, CliError> {
    token
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad token '{token}' in grid '{grid}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let flags = Params {
            delta: Some(0.3),
            ..Params::default()
        };
        let file: Params = serde_json::from_str(r#"{"delta": 0.7, "T": 500, "error_model": "ppv_mid"}"#).unwrap();
        let p = flags.or(file);
        assert_eq!(p.delta, Some(0.3));
        assert_eq!(p.horizon, Some(500));
        assert_eq!(p.error_model().unwrap(), ErrorModel::PpvMid);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<Params>(r#"{"horizon": 5}"#).is_err());
    }

    #[test]
    fn grids() {
        let p = Params {
            grid: Some("0:1:0.25".into()),
            ..Params::default()
        };
        assert_eq!(p.real_grid((0.0, 0.0, 1.0)).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let p = Params {
            grid: Some("10:20:5".into()),
            ..Params::default()
        };
        assert_eq!(p.int_grid((0, 0, 1)).unwrap(), vec![10, 15, 20]);
        for bad in ["1:2", "a:2:1", "1:2:3:4"] {
            let p = Params {
                grid: Some(bad.into()),
                ..Params::default()
            };
            assert!(matches!(p.real_grid((0.0, 1.0, 1.0)), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn schedule_sources() {
        let p = Params {
            m: Some(4),
            ..Params::default()
        };
        assert_eq!(p.schedule().unwrap().blocks(), &[1, 2, 4, 8]);
        let p = Params {
            m: Some(4),
            schedule: Some("custom:1,2".into()),
            ..Params::default()
        };
        assert!(p.schedule().is_err());
        assert!(Params::default().schedule().is_err());
    }
}
