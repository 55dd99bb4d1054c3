//! Flat key=value run configuration. Every command resolves its parameters
//! into one of these, writes it as `config.txt`, and can be re-executed from
//! that file alone; values use Rust's shortest round-trip float formatting,
//! so the rerun sees bit-identical parameters.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    /// Sets a key, replacing any earlier value; insertion order is kept so
    /// the written file is stable.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        if let Some(e) = self.entries.iter_mut().find(|(k, _)| k == key) {
            e.1 = value;
        } else {
            self.entries.push((key.to_owned(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError::usage(format!("config is missing the \"{key}\" key")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse().map_err(|e| {
            CliError::usage(format!("config key \"{key}\" has invalid value \"{raw}\": {e}"))
        })
    }

    /// Parses the key when present, otherwise the default. Present-but-bad
    /// values still fail.
    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            Some(_) => self.parsed(key),
            None => Ok(default),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| io_err("write", path, e))
    }

    pub fn read(path: &Path) -> CliResult<ConfigMap> {
        let text = fs::read_to_string(path).map_err(|e| io_err("read", path, e))?;
        let mut map = ConfigMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(io_err(
                    "parse",
                    path,
                    format!("line {} has no '=': {line:?}", lineno + 1),
                ));
            };
            map.set(key, value);
        }
        Ok(map)
    }
}
