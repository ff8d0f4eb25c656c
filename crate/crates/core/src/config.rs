//! Line-based `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys under the `run.` and
//! `meta.` namespaces are collected separately; manifests use them to carry
//! subcommand arguments and run metadata next to the resolved config.

use std::collections::BTreeMap;
use std::path::Path;

use crate::ensemble::ExperimentConfig;
use crate::error::{Error, Result};

/// Recognized configuration keys, in rendering order.
pub const CONFIG_KEYS: &[&str] = &[
    "dim",
    "modes",
    "cutoff_k",
    "alpha",
    "theta",
    "sigma",
    "dt",
    "horizon",
    "paths",
    "scheme",
    "seed",
    "stride",
    "drift_correct",
    "solver_tol",
    "solver_max_iter",
    "fd_step",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    pub run: BTreeMap<String, String>,
    pub meta: BTreeMap<String, String>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

/// Sets one key. Constraints are checked by [`ExperimentConfig::validate`].
pub fn apply_setting(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key {
        "dim" => cfg.dim = parse_value(key, value, "an integer")?,
        "modes" => cfg.modes = parse_value(key, value, "a non-negative integer")?,
        "cutoff_k" => cfg.cutoff_k = parse_value(key, value, "a number")?,
        "alpha" => cfg.alpha = parse_value(key, value, "a number")?,
        "theta" => cfg.theta = parse_value(key, value, "a number")?,
        "sigma" => cfg.sigma = parse_value(key, value, "a number")?,
        "dt" => cfg.dt = parse_value(key, value, "a number")?,
        "horizon" => cfg.horizon = parse_value(key, value, "a number")?,
        "paths" => cfg.paths = parse_value(key, value, "a non-negative integer")?,
        "scheme" => cfg.scheme.kind = value.parse()?,
        "seed" => cfg.seed = parse_value(key, value, "an unsigned 64-bit integer")?,
        "stride" => cfg.stride = parse_value(key, value, "a positive integer")?,
        "drift_correct" => cfg.drift_correct = parse_bool(key, value)?,
        "solver_tol" => cfg.scheme.tol = parse_value(key, value, "a number")?,
        "solver_max_iter" => cfg.scheme.max_iter = parse_value(key, value, "a positive integer")?,
        "fd_step" => cfg.scheme.fd_step = parse_value(key, value, "a number")?,
        _ => {
            return Err(Error::config(
                key,
                format!("unknown key; expected one of {}", CONFIG_KEYS.join(", ")),
            ))
        }
    }
    Ok(())
}

/// Splits text into `(line number, key, value)` triples.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(
                format!("line {}", i + 1),
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses config text on top of the defaults, then applies `overrides`
/// (flags win over the file) and validates the result.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<ParsedConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut run = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for (line, key, value) in entries(text)? {
        if !seen.insert(key.clone()) {
            return Err(Error::config(&key, format!("duplicate key on line {line}")));
        }
        if let Some(k) = key.strip_prefix("run.") {
            run.insert(k.to_string(), value);
        } else if let Some(k) = key.strip_prefix("meta.") {
            meta.insert(k.to_string(), value);
        } else {
            apply_setting(&mut cfg, &key, &value)?;
        }
    }
    for (key, value) in overrides {
        apply_setting(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(ParsedConfig { config: cfg, run, meta })
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig> {
    parse_config_with(text, &[])
}

/// Reads and parses a config file. A missing file is an I/O error.
pub fn parse_config_file(path: &Path, overrides: &[(String, String)]) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_with(&text, overrides)
}

/// Renders every key with round-trip float formatting.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let lines = [
        ("dim", cfg.dim.to_string()),
        ("modes", cfg.modes.to_string()),
        ("cutoff_k", cfg.cutoff_k.to_string()),
        ("alpha", cfg.alpha.to_string()),
        ("theta", cfg.theta.to_string()),
        ("sigma", cfg.sigma.to_string()),
        ("dt", cfg.dt.to_string()),
        ("horizon", cfg.horizon.to_string()),
        ("paths", cfg.paths.to_string()),
        ("scheme", cfg.scheme.kind.to_string()),
        ("seed", cfg.seed.to_string()),
        ("stride", cfg.stride.to_string()),
        ("drift_correct", cfg.drift_correct.to_string()),
        ("solver_tol", format!("{:e}", cfg.scheme.tol)),
        ("solver_max_iter", cfg.scheme.max_iter.to_string()),
        ("fd_step", format!("{:e}", cfg.scheme.fd_step)),
    ];
    let mut out = String::new();
    for (k, v) in lines {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
