//! Layered `key = value` settings: built-in defaults, then the config file
//! (top-level keys, then the command's `[section]`), then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Resolved settings for one command, as strings until a typed lookup.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn set_default(&mut self, key: &str, value: impl Into<String>) {
        self.values.entry(key.to_string()).or_insert_with(|| value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.trim()
                    .parse::<T>()
                    .map_err(|e| CliError::Config(format!("setting `{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
    }

    /// Comma-separated list of reals.
    pub fn vector(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| CliError::Config(format!("setting `{key}`: `{s}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key).map(str::trim) {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") | Some("") => Ok(true),
            Some(other) => Err(CliError::Config(format!("setting `{key}` must be a boolean, got `{other}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    /// Merges a config file for `command`. Plain-text files use `key = value`
    /// lines with `[section]` headers and `#` comments; a JSON manifest
    /// written by this tool is also accepted, which replays its settings.
    pub fn merge_file(&mut self, path: &Path, command: &str) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            return self.merge_manifest(&text, path);
        }
        let mut section: Option<String> = None;
        let mut global = Vec::new();
        let mut own = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1)));
            };
            let entry = (k.trim().to_string(), v.trim().to_string());
            match section.as_deref() {
                None => global.push(entry),
                Some(s) if s == command => own.push(entry),
                Some(_) => {}
            }
        }
        for (k, v) in global.into_iter().chain(own) {
            self.values.insert(k, v);
        }
        Ok(())
    }

    fn merge_manifest(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("cannot parse manifest {}: {e}", path.display())))?;
        let Some(map) = value.get("settings").and_then(|s| s.as_object()) else {
            return Err(CliError::Config(format!("{} has no `settings` object", path.display())));
        };
        for (k, v) in map {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            self.values.insert(k.clone(), v);
        }
        Ok(())
    }
}
