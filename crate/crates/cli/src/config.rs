//! Flat `key = value` configuration files and flag/file/default resolution.
//!
//! Grammar (UTF-8, one setting per line):
//!
//! ```text
//! line    := blank | comment | setting
//! comment := optional whitespace, '#', anything
//! setting := key, optional whitespace, '=', optional whitespace, value
//! key     := [A-Za-z0-9_-]+      ('-' and '_' are interchangeable)
//! value   := rest of the line, surrounding whitespace trimmed, non-empty
//! ```
//!
//! A `#` after a value is part of the value. List values are comma
//! separated. Keys are the long flag names of the command being run; a key
//! the command does not understand is an error, as is a repeated key.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    File,
    Flag,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!("line {}: expected `key = value`", no + 1)));
        };
        let key = normalize_key(k);
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CliError::usage(format!("line {}: bad key {:?}", no + 1, k.trim())));
        }
        let value = v.trim();
        if value.is_empty() {
            return Err(CliError::usage(format!("line {}: empty value for {key}", no + 1)));
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(CliError::usage(format!("line {}: {key} set twice", no + 1)));
        }
    }
    Ok(out)
}

/// Settings gathered from a config file and flags; flags win. Every key must
/// be consumed by the command, so typos surface as errors.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Origin)>,
}

impl Settings {
    pub fn from_file(path: Option<&Path>) -> CliResult<Settings> {
        let mut s = Settings::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            for (k, v) in parse_config(&text).map_err(|e| e.context(p.display()))? {
                s.values.insert(k, (v, Origin::File));
            }
        }
        Ok(s)
    }

    pub fn flag(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.values.insert(normalize_key(key), (v.to_string(), Origin::Flag));
        }
    }

    pub fn flag_list<T: Display>(&mut self, key: &str, values: &[T]) {
        if !values.is_empty() {
            let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            self.values.insert(normalize_key(key), (joined, Origin::Flag));
        }
    }

    pub fn flag_switch(&mut self, key: &str, on: bool) {
        if on {
            self.values.insert(normalize_key(key), ("true".into(), Origin::Flag));
        }
    }

    fn take_raw(&mut self, key: &str) -> Option<(String, Origin)> {
        self.values.remove(key)
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, origin)) => v.parse().map(Some).map_err(|e| {
                let src = if origin == Origin::Flag { "flag" } else { "config" };
                CliError::usage(format!("{src} {key} = {v:?}: {e}"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::usage(format!("missing required setting --{}", key.replace('_', "-"))))
    }

    pub fn list<T: FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some((v, _)) = self.take_raw(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::usage(format!("{key}: {s:?}: {e}"))))
            .collect::<CliResult<Vec<T>>>()
            .map(Some)
    }

    pub fn paths(&mut self, key: &str) -> CliResult<Vec<PathBuf>> {
        Ok(self.list::<PathBuf>(key)?.unwrap_or_default())
    }

    pub fn switch(&mut self, key: &str) -> CliResult<bool> {
        self.get_or(key, false)
    }

    /// Errors on any setting nobody asked for.
    pub fn finish(self) -> CliResult<()> {
        match self.values.into_iter().next() {
            None => Ok(()),
            Some((k, (_, origin))) => Err(CliError::usage(match origin {
                Origin::File => format!("config key {k:?} is not understood by this command"),
                Origin::Flag => format!("flag --{} is not understood by this command", k.replace('_', "-")),
            })),
        }
    }
}
