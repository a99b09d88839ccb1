//! Flat key=value run configuration.
//!
//! The format is UTF-8 lines of `key = value`, `#` comments, and
//! comma-separated lists; later assignments override earlier ones.
//! Command-line flags override config values, which override defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use deql_core::solver::{Hyperparameters, Variant};

/// Parsed configuration: a flat string map with typed accessors.
#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{source}:{}: expected `key = value`, got `{line}`", lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().with_context(|| format!("config key `{key}`: `{v}` is not a number")))
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| v.parse::<usize>().with_context(|| format!("config key `{key}`: `{v}` is not an integer")))
            .transpose()
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    out.push(
                        part.parse::<f64>()
                            .with_context(|| format!("config key `{key}`: `{part}` is not a number"))?,
                    );
                }
                if out.is_empty() {
                    bail!("config key `{key}` is an empty list");
                }
                Ok(Some(out))
            }
        }
    }
}

/// Hyperparameter sources merged as flag > config > default.
#[derive(Clone, Debug, Default)]
pub struct HpArgs {
    pub variant: Option<Variant>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub rank_k: Option<usize>,
}

impl HpArgs {
    /// Fill unset fields from config keys of the same name.
    pub fn merge_config(mut self, config: &Config) -> Result<HpArgs> {
        if self.variant.is_none() {
            self.variant = config
                .get("variant")
                .map(|v| v.parse::<Variant>().map_err(anyhow::Error::msg))
                .transpose()?;
        }
        self.a = self.a.or(config.get_f64("a")?);
        self.b = self.b.or(config.get_f64("b")?);
        self.p = self.p.or(config.get_f64("p")?);
        self.lambda = self.lambda.or(config.get_f64("lambda")?);
        self.rank_k = self.rank_k.or(config.get_usize("rank_k")?);
        Ok(self)
    }

    /// Resolve to validated hyperparameters. Defaults: a = 1, b = 1,
    /// p = 0.5, lambda = 0; b_zero forces b = 0 and low_rank copies b into
    /// a unless a was given explicitly.
    pub fn resolve(&self) -> Result<Hyperparameters> {
        let variant = self
            .variant
            .ok_or_else(|| anyhow::anyhow!("no variant given (flag --variant or config `variant`)"))?;
        let b = self.b.unwrap_or(match variant {
            Variant::BZero => 0.0,
            _ => 1.0,
        });
        let a = self.a.unwrap_or(match variant {
            Variant::LowRank => b,
            _ => 1.0,
        });
        let hp = Hyperparameters {
            a,
            b,
            p: self.p.unwrap_or(0.5),
            lambda: self.lambda.unwrap_or(0.0),
            variant,
            rank_k: self.rank_k,
        };
        hp.validate()?;
        Ok(hp)
    }
}
