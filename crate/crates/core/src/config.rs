//! Flat `key = value` configuration shared by every pipeline stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sigdb::DEFAULT_NEEDLES;

pub const ENV_PREFIX: &str = "KEYSCAN_";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub bfs_node_limit: usize,
    pub obfuscation_min_component: usize,
    pub per_app_timeout_minutes: u64,
    pub needle_set: Vec<String>,
    pub signature_db_path: Option<PathBuf>,
    pub min_installs_filter: u64,
    pub cha_enabled: bool,
    /// Worker threads for app-level parallelism; 0 picks the number of CPUs.
    pub workers: usize,
    pub top_n_packages: usize,
    /// Millisecond budget that replaces the minute budget; for tests.
    pub timeout_ms_override: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bfs_node_limit: 1000,
            obfuscation_min_component: 3,
            per_app_timeout_minutes: 30,
            needle_set: DEFAULT_NEEDLES.iter().map(|s| s.to_string()).collect(),
            signature_db_path: None,
            min_installs_filter: 10_000,
            cha_enabled: false,
            workers: 0,
            top_n_packages: 10,
            timeout_ms_override: None,
        }
    }
}

pub const KEYS: [&str; 9] = [
    "bfs_node_limit",
    "obfuscation_min_component",
    "per_app_timeout_minutes",
    "needle_set",
    "signature_db_path",
    "min_installs_filter",
    "cha_enabled",
    "workers",
    "top_n_packages",
];

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn positive(key: &str, value: &str) -> Result<u64, ConfigError> {
    let n: u64 = value.parse().map_err(|e: std::num::ParseIntError| bad(key, value, e.to_string()))?;
    if n == 0 {
        return Err(bad(key, value, "must be at least 1"));
    }
    Ok(n)
}

impl Config {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "bfs_node_limit" => self.bfs_node_limit = positive(key, value)? as usize,
            "obfuscation_min_component" => self.obfuscation_min_component = positive(key, value)? as usize,
            "per_app_timeout_minutes" => self.per_app_timeout_minutes = positive(key, value)?,
            "min_installs_filter" => {
                self.min_installs_filter = value.parse().map_err(|e: std::num::ParseIntError| bad(key, value, e.to_string()))?
            }
            "top_n_packages" => self.top_n_packages = positive(key, value)? as usize,
            "workers" => {
                self.workers = value.parse().map_err(|e: std::num::ParseIntError| bad(key, value, e.to_string()))?
            }
            "needle_set" => {
                let needles: Vec<String> =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
                if needles.is_empty() {
                    return Err(bad(key, value, "needs at least one needle"));
                }
                self.needle_set = needles;
            }
            "signature_db_path" => {
                self.signature_db_path = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "cha_enabled" => {
                self.cha_enabled = match value.to_ascii_lowercase().as_str() {
                    "true" | "1" | "yes" | "on" => true,
                    "false" | "0" | "no" | "off" => false,
                    _ => return Err(bad(key, value, "expected a boolean")),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
        self.apply_text(&text)
    }

    /// Applies `KEYSCAN_<KEY>` variables from `vars`; other variables are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut found: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in vars {
            if let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase();
                if KEYS.contains(&key.as_str()) {
                    found.insert(key, v.as_ref().to_string());
                }
            }
        }
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn timeout(&self) -> std::time::Duration {
        match self.timeout_ms_override {
            Some(ms) => std::time::Duration::from_millis(ms),
            None => std::time::Duration::from_secs(self.per_app_timeout_minutes * 60),
        }
    }

    /// The thresholds recorded in the manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("bfs_node_limit".into(), self.bfs_node_limit.to_string());
        m.insert("obfuscation_min_component".into(), self.obfuscation_min_component.to_string());
        m.insert("per_app_timeout_minutes".into(), self.per_app_timeout_minutes.to_string());
        m.insert("needle_set".into(), self.needle_set.join(","));
        m.insert(
            "signature_db_path".into(),
            self.signature_db_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        m.insert("min_installs_filter".into(), self.min_installs_filter.to_string());
        m.insert("cha_enabled".into(), self.cha_enabled.to_string());
        m.insert("top_n_packages".into(), self.top_n_packages.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        let snap = self.snapshot();
        let mut out = String::new();
        for k in KEYS {
            let v = match k {
                "workers" => self.workers.to_string(),
                _ => snap[k].clone(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
