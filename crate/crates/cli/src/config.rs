//! `key = value` config files and flag/file/default resolution.
//!
//! Precedence is flags > config file > `CARDIOLENS_SEED` (seed only) >
//! built-in defaults. Every resolved value is echoed to standard error at
//! run start for audit.

use anyhow::{anyhow, bail, Context, Result};
use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Every key the config file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    // shared
    "seed",
    // preprocess
    "input",
    "output",
    "target_width",
    "target_height",
    "sharpen_k",
    "apply_v_offset",
    "canny_low",
    "canny_high",
    "reconstruction_n",
    // data
    "manifest",
    "image_root",
    "synthetic",
    "train_frac",
    "val_frac",
    "test_frac",
    // training
    "run_dir",
    "epochs",
    "batch_size",
    "optimizer",
    "learning_rate",
    "momentum_beta",
    "rms_avg",
    "beta1",
    "beta2",
    "epsilon",
    "image_size",
    "heads",
    "dropout_rate",
    "augment",
    "augment_rotation",
    "augment_scale",
    "augment_noise",
    "init_checkpoint",
    "freeze",
    // evaluate / predict
    "checkpoint",
    "predictions",
    "metrics_out",
];

/// Parsed config file contents.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    /// Loads and validates a config file; `None` path yields an empty config.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`, found {raw:?}", path.display(), lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("{}:{}: unknown config key {key:?}", path.display(), lineno + 1);
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("{}:{}: duplicate config key {key:?}", path.display(), lineno + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown key {key} requested");
        self.values.get(key).map(String::as_str)
    }
}

/// Accumulates the resolved settings and echoes them for audit.
#[derive(Debug, Default)]
pub struct Resolved {
    echo: Vec<(String, String)>,
}

impl Resolved {
    pub fn put<T: Display>(&mut self, key: &str, value: &T) {
        self.echo.push((key.to_string(), value.to_string()));
    }

    /// Prints `config: key = value` per resolved setting, to stderr so
    /// command output contracts on stdout stay clean.
    pub fn echo(&self) {
        for (key, value) in &self.echo {
            eprintln!("config: {key} = {value}");
        }
    }
}

fn parse_as<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse::<T>().map_err(|e| anyhow!("config value for {key} ({raw:?}) is invalid: {e}"))
}

/// flag > file > default.
pub fn resolve<T>(
    out: &mut Resolved,
    key: &str,
    flag: Option<T>,
    file: &FileConfig,
    default: T,
) -> Result<T>
where
    T: FromStr + Display,
    T::Err: Display,
{
    let value = match flag {
        Some(v) => v,
        None => match file.get(key) {
            Some(raw) => parse_as(key, raw)?,
            None => default,
        },
    };
    out.put(key, &value);
    Ok(value)
}

/// flag > file, `None` when neither is present.
pub fn resolve_opt<T>(
    out: &mut Resolved,
    key: &str,
    flag: Option<T>,
    file: &FileConfig,
) -> Result<Option<T>>
where
    T: FromStr + Display,
    T::Err: Display,
{
    let value = match flag {
        Some(v) => Some(v),
        None => file.get(key).map(|raw| parse_as(key, raw)).transpose()?,
    };
    if let Some(v) = &value {
        out.put(key, v);
    }
    Ok(value)
}

pub fn resolve_path(
    out: &mut Resolved,
    key: &str,
    flag: Option<PathBuf>,
    file: &FileConfig,
) -> Option<PathBuf> {
    let value = flag.or_else(|| file.get(key).map(PathBuf::from));
    if let Some(v) = &value {
        out.put(key, &v.display());
    }
    value
}

/// Seed precedence: flag > file > `CARDIOLENS_SEED` > 42.
pub fn resolve_seed(out: &mut Resolved, flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    let value = match flag {
        Some(v) => v,
        None => match file.get("seed") {
            Some(raw) => parse_as("seed", raw)?,
            None => match std::env::var("CARDIOLENS_SEED") {
                Ok(raw) => parse_as("seed (from CARDIOLENS_SEED)", &raw)?,
                Err(_) => 42,
            },
        },
    };
    out.put("seed", &value);
    Ok(value)
}
