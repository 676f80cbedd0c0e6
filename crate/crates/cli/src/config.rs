//! Flat `section.key = value` configuration files.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {message}")]
    Read { path: String, message: String },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// Key path the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key-value pairs. Typed getters record which keys were read so that
/// misspelled keys can be reported by [`Config::check_unused`].
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, found `{body}`"),
                });
            };
            let key = key.trim();
            let valid_key = !key.is_empty()
                && key
                    .split('.')
                    .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid_key {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("malformed key `{key}`"),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("`{key}` already set on line {}", prev.line),
                });
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    /// Raw value, marking the key as read.
    pub fn raw(&self, key: &str) -> Option<&str> {
        let e = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(&e.value)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> ConfigResult<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::invalid(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> ConfigResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        let v: f64 = self.get_or(key, default)?;
        if !v.is_finite() {
            return Err(ConfigError::invalid(key, format!("must be finite, got {v}")));
        }
        Ok(v)
    }

    /// A finite value strictly greater than zero.
    pub fn positive_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        let v = self.f64_or(key, default)?;
        if !(v > 0.0) {
            return Err(ConfigError::invalid(key, format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    pub fn nonnegative_or(&self, key: &str, default: f64) -> ConfigResult<f64> {
        let v = self.f64_or(key, default)?;
        if !(v >= 0.0) {
            return Err(ConfigError::invalid(key, format!("must be >= 0, got {v}")));
        }
        Ok(v)
    }

    pub fn count_or(&self, key: &str, default: usize, min: usize) -> ConfigResult<usize> {
        let v: usize = self.get_or(key, default)?;
        if v < min {
            return Err(ConfigError::invalid(key, format!("must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> ConfigResult<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(ConfigError::invalid(key, format!("expected true or false, got `{v}`"))),
        }
    }

    /// Comma-separated list of finite numbers.
    pub fn f64_list(&self, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| {
                let s = s.trim();
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(ConfigError::invalid(key, format!("`{s}` is not a finite number"))),
                }
            })
            .collect::<ConfigResult<Vec<f64>>>()
            .map(Some)
    }

    /// Comma-separated list of words.
    pub fn word_list(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key)
            .map(|raw| raw.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    /// One of `choices`, or `default` when absent.
    pub fn choice<'a>(&self, key: &str, choices: &[&'a str], default: &'a str) -> ConfigResult<&'a str> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => choices.iter().copied().find(|c| *c == v).ok_or_else(|| {
                ConfigError::invalid(key, format!("unknown value `{v}`; expected one of {}", choices.join(", ")))
            }),
        }
    }

    /// Keys present in the file that no getter asked for.
    pub fn check_unused(&self) -> ConfigResult<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            None => Ok(()),
            Some((k, e)) => Err(ConfigError::invalid(
                k,
                format!("unknown key on line {} (not used by this experiment)", e.line),
            )),
        }
    }

    /// All keys and values in sorted order.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let c = Config::parse("# header\nensemble.beta = 2.5  # inline\n\nsnapshots = 0, 1.5\n").unwrap();
        assert_eq!(c.positive_or("ensemble.beta", 1.0).unwrap(), 2.5);
        assert_eq!(c.f64_list("snapshots").unwrap().unwrap(), vec![0.0, 1.5]);
        assert!(c.check_unused().is_ok());
    }

    #[test]
    fn reports_key_paths() {
        let c = Config::parse("ensemble.beta = -1\nlattice.typo = 3\n").unwrap();
        let e = c.positive_or("ensemble.beta", 1.0).unwrap_err();
        assert_eq!(e.key(), Some("ensemble.beta"));
        assert_eq!(c.check_unused().unwrap_err().key(), Some("lattice.typo"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(Config::parse("no equals sign"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Config::parse("a = 1\na = 2"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(Config::parse("a..b = 1"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn choices_and_bools() {
        let c = Config::parse("kinetic.clamp = yes\ndispersion.kind = nls\n").unwrap();
        assert!(c.bool_or("kinetic.clamp", false).unwrap());
        assert_eq!(c.choice("dispersion.kind", &["optical", "nls"], "optical").unwrap(), "nls");
        assert!(c.choice("dispersion.kind", &["optical"], "optical").is_err());
    }
}
