//! `key=value` run configuration. Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoders::{Architecture, Nonlinearity};
use crate::error::{Error, Result};
use crate::training::{ModelSpec, TrainConfig};

pub const KEYS: &[&str] = &[
    "arch",
    "embedding_dim",
    "hidden",
    "filters",
    "nonlinearity",
    "shared",
    "freeze_embeddings",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "eval_candidates",
    "learning_rate",
    "max_len",
    "threads",
    "min_count",
    "max_vocab",
    "train",
    "valid",
    "test",
    "vocab",
    "embeddings",
    "model",
    "ensemble",
    "out",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    i + 1
                )));
            };
            let key = key.trim();
            if cfg.values.contains_key(key) {
                return Err(Error::Config(format!("line {}: {key} is set twice", i + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get_str(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get_str(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Config(format!("{key}={other}: expected true or false"))),
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("missing required setting {key} (flag --{key} or config key)")))
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(self.get("arch")?.unwrap_or(Architecture::Lstm))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let default = ModelSpec::default();
        let filters = match self.get_str("filters") {
            Some(s) => parse_filters(s)?,
            None => default.filters,
        };
        Ok(ModelSpec {
            embedding_dim: self.get_or("embedding_dim", default.embedding_dim)?,
            hidden: self.get_or("hidden", default.hidden)?,
            filters,
            nonlinearity: self.get_or("nonlinearity", Nonlinearity::Relu)?,
            shared: self.get_bool("shared")?.unwrap_or(default.shared),
            embeddings: None,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: self.get_or("batch_size", d.batch_size)?,
            max_epochs: self.get_or("epochs", d.max_epochs)?,
            patience: self.get_or("patience", d.patience)?,
            seed: self.get_or("seed", d.seed)?,
            eval_candidates: self.get_or("eval_candidates", d.eval_candidates)?,
            shared_encoders: self.get_bool("shared")?.unwrap_or(d.shared_encoders),
            freeze_embeddings: self.get_bool("freeze_embeddings")?.unwrap_or(d.freeze_embeddings),
            learning_rate: self.get_or("learning_rate", d.learning_rate)?,
            max_len: self.get_or("max_len", d.max_len)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a filter spec such as `2:400,3:100,4:100` (width:count pairs).
pub fn parse_filters(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (w, c) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("filter {part:?} is not width:count")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad filter spec {part:?}")))
            };
            Ok((parse(w)?, parse(c)?))
        })
        .collect()
}

pub fn format_filters(filters: &[(usize, usize)]) -> String {
    filters
        .iter()
        .map(|(w, c)| format!("{w}:{c}"))
        .collect::<Vec<_>>()
        .join(",")
}
