//! Flat `key=value` run configuration files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use marl_core::runners::{Architecture, RunConfig, Transport};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("{key}: {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: format!("'{value}': {e}"),
    })
}

/// Sets one key on `cfg`.
pub fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    match key {
        "arch" => cfg.architecture = parse::<Architecture>(key, value)?,
        "env" => cfg.env = value.to_string(),
        "steps" => cfg.max_steps = parse(key, value)?,
        "time_limit_ms" => cfg.time_limit_ms = parse(key, value)?,
        "workers" => cfg.num_workers = parse(key, value)?,
        "population" => cfg.population_size = parse(key, value)?,
        "unroll" => cfg.unroll_length = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "lr" => cfg.learning_rate = parse(key, value)?,
        "gamma" => cfg.vtrace.gamma = parse(key, value)?,
        "rho_bar" => cfg.vtrace.rho_bar = parse(key, value)?,
        "c_bar" => cfg.vtrace.c_bar = parse(key, value)?,
        "entropy_coef" => cfg.vtrace.entropy_coef = parse(key, value)?,
        "value_coef" => cfg.vtrace.value_coef = parse(key, value)?,
        "sync_interval" => cfg.param_sync_interval = parse(key, value)?,
        "infer_batch" => cfg.infer_batch = parse(key, value)?,
        "infer_timeout_ms" => cfg.infer_timeout_ms = parse(key, value)?,
        "hidden_dim" => cfg.hidden_dim = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "replay_capacity" => cfg.replay_capacity = parse(key, value)?,
        "log_wall_time" => cfg.log_wall_time = parse(key, value)?,
        "transport" => cfg.transport = parse::<Transport>(key, value)?,
        "out" => cfg.out_dir = Some(PathBuf::from(value)),
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

pub fn parse_config(text: &str, cfg: &mut RunConfig) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |e: ConfigError| ConfigError::Line {
            line: i + 1,
            message: e.to_string(),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(ConfigError::Invalid(format!("expected key=value, found '{line}'"))))?;
        apply(cfg, key.trim(), value).map_err(at)?;
    }
    Ok(())
}

/// Snapshot of every setting except the output directory, readable by
/// [`parse_config`].
pub fn format_config(cfg: &RunConfig) -> String {
    let v = &cfg.vtrace;
    let entries: [(&str, String); 22] = [
        ("arch", cfg.architecture.to_string()),
        ("env", cfg.env.clone()),
        ("steps", cfg.max_steps.to_string()),
        ("time_limit_ms", cfg.time_limit_ms.to_string()),
        ("workers", cfg.num_workers.to_string()),
        ("population", cfg.population_size.to_string()),
        ("unroll", cfg.unroll_length.to_string()),
        ("seed", cfg.seed.to_string()),
        ("lr", cfg.learning_rate.to_string()),
        ("gamma", v.gamma.to_string()),
        ("rho_bar", v.rho_bar.to_string()),
        ("c_bar", v.c_bar.to_string()),
        ("entropy_coef", v.entropy_coef.to_string()),
        ("value_coef", v.value_coef.to_string()),
        ("sync_interval", cfg.param_sync_interval.to_string()),
        ("infer_batch", cfg.infer_batch.to_string()),
        ("infer_timeout_ms", cfg.infer_timeout_ms.to_string()),
        ("hidden_dim", cfg.hidden_dim.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("replay_capacity", cfg.replay_capacity.to_string()),
        ("log_wall_time", cfg.log_wall_time.to_string()),
        ("transport", cfg.transport.as_str().to_string()),
    ];
    let mut out = String::from("# marl run configuration\n");
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}
