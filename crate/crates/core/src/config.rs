// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` files and suffixed duration values.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid duration `{0}` (expected e.g. 250ns, 100us, 10ms, 1.5s)")]
    BadDuration(String),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: invalid value `{value}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parse a duration such as `100us`, `1.5ms` or `2s` into nanoseconds.
/// A bare number is nanoseconds. `µs` is accepted for `us`.
pub fn parse_duration_ns(text: &str) -> Result<u64, ConfigError> {
    let bad = || ConfigError::BadDuration(text.to_string());
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(t.len());
    let (number, unit) = t.split_at(split);
    let scale: u64 = match unit.trim() {
        "" | "ns" => 1,
        "us" | "µs" => 1_000,
        "ms" => 1_000_000,
        "s" => 1_000_000_000,
        _ => return Err(bad()),
    };
    let (int, frac) = number.split_once('.').unwrap_or((number, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let int: u64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let mut total = int.checked_mul(scale).ok_or_else(bad)?;
    // Fractional digits below 1 ns are truncated.
    let mut place = scale;
    for digit in frac.bytes() {
        if !digit.is_ascii_digit() {
            return Err(bad());
        }
        place /= 10;
        total = total
            .checked_add(u64::from(digit - b'0') * place)
            .ok_or_else(bad)?;
    }
    Ok(total)
}

/// Render nanoseconds with the largest unit that divides them exactly.
pub fn format_duration_ns(ns: u64) -> String {
    match ns {
        0 => "0ns".to_string(),
        n if n % 1_000_000_000 == 0 => format!("{}s", n / 1_000_000_000),
        n if n % 1_000_000 == 0 => format!("{}ms", n / 1_000_000),
        n if n % 1_000 == 0 => format!("{}us", n / 1_000),
        n => format!("{n}ns"),
    }
}

/// Ordered `key = value` pairs. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Last value for `key`, so later lines override earlier ones.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn duration(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key).map(parse_duration_ns).transpose()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
