//! Flat `key = value` configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value
//! key     := [a-z_]+
//! ```
//!
//! Values run to the end of the line with surrounding whitespace trimmed.
//! Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use uqstream_core::{Result, UqError};

pub const KEYS: &[&str] = &[
    "experiment",
    "method",
    "m",
    "n",
    "k",
    "t",
    "r",
    "w",
    "alpha",
    "seed",
    "jobs",
    "match_budget",
    "out",
    "theta_c",
    "theta_box",
    "order",
    "price",
    "cost",
    "weight_mode",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UqError::Config(format!("line {}: expected 'key = value'", no + 1)))?;
            let key = key.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                return Err(UqError::Config(format!("line {}: unknown key '{key}'", no + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(UqError::Config(format!("line {}: key '{key}' given twice", no + 1)));
            }
        }
        Ok(FileConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UqError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| UqError::Config(format!("config key '{key}': {e}"))))
            .transpose()
    }
}
