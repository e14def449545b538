//! Line-oriented `key=value` config files and flag resolution.
//!
//! Precedence is flags > config file > built-in defaults; every knob name
//! matches its long flag.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use hknn::{Error, Result};

const KNOWN_KEYS: &[&str] = &[
    "pairs",
    "max-len",
    "dim",
    "seed",
    "m",
    "c",
    "k",
    "temp",
    "lambda",
    "strategy",
    "nlist",
    "nprobe",
    "pq",
    "pq-m",
    "pq-ksub",
    "freq-threshold",
    "beam",
    "threads",
    "format",
    "out",
    "src-vocab",
    "tgt-vocab",
    "noise",
    "zipf",
    "sizes",
    "c-sweep",
    "n-sweep",
    "reps",
    "warmup",
    "sentences",
    "check-ordering",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::usage(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::usage(format!(
                    "config line {}: unknown key {key:?}",
                    lineno + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Debug,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::usage(format!("config key {key}: cannot parse {raw:?}: {e:?}"))
            }),
        }
    }

    /// flag > config > default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Debug,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.parsed(key)?.unwrap_or(default)),
        }
    }

    /// Like [`ConfigFile::resolve`] without a default.
    pub fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Debug,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.parsed(key),
        }
    }
}

/// Comma-separated counts, e.g. `8,64,512`.
pub fn parse_usize_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::usage(format!("bad count {s:?} in list {raw:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_config_default() {
        let mut cfg = ConfigFile::default();
        cfg.values.insert("k".into(), "8".into());
        assert_eq!(cfg.resolve(Some(4usize), "k", 16).unwrap(), 4);
        assert_eq!(cfg.resolve(None::<usize>, "k", 16).unwrap(), 8);
        assert_eq!(cfg.resolve(None::<usize>, "c", 16).unwrap(), 16);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf");
        fs::write(&path, "bogus=1\n").unwrap();
        assert!(matches!(
            ConfigFile::load(Some(&path)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf");
        fs::write(&path, "# comment\n\nlambda=0.25\n").unwrap();
        let cfg = ConfigFile::load(Some(&path)).unwrap();
        assert_eq!(cfg.resolve(None::<f64>, "lambda", 0.5).unwrap(), 0.25);
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_usize_list("8, 64,512").unwrap(), vec![8, 64, 512]);
        assert!(parse_usize_list("8,x").is_err());
    }
}
