//! Flag/config-file merging. Flags win over file values, file values win
//! over defaults, and every resolved value is recorded for report metadata.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => nextaction::kv::read(p)?
                .into_iter()
                .map(|(k, v)| (normalize(&k), v))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Settings {
            file,
            ..Default::default()
        })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key {key} = {raw:?}: {e}")),
            None => Ok(None),
        }
    }

    /// Resolves `key` from the flag, then the file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.used.insert(key.to_string());
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Settings::get`] for an on/off switch given as a bare flag.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.from_file::<bool>(key)?.unwrap_or(false);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Comma-separated list, e.g. `--nodes 16,32`.
    pub fn list<T>(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw: String = self.get(key, flag, default.to_string())?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| anyhow!("{key}: bad list element {s:?}: {e}"))
            })
            .collect()
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    /// Resolved values plus `input.<name>.sha256` checksums.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        self.effective.clone()
    }

    /// File keys the command never asked for; reported as warnings so one
    /// config file can serve several subcommands.
    pub fn unused(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect()
    }

    pub fn checksum(&mut self, name: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.record(&format!("input.{name}.file"), file);
        self.record(
            &format!("input.{name}.sha256"),
            nextaction::util::sha256_hex(&bytes),
        );
        Ok(bytes)
    }
}
