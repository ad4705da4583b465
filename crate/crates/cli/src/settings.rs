//! Resolved run settings: clap defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;
use neb_core::config::{normalize_key, parse_kv};

use crate::Failure;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn raw(matches: &ArgMatches, id: &str) -> Option<String> {
    let mut vals = matches.try_get_raw(id).ok()??;
    vals.next().map(|v| v.to_string_lossy().into_owned())
}

impl Settings {
    /// `known` lists the argument ids of the subcommand; config keys outside it are rejected.
    pub fn resolve(matches: &ArgMatches, known: &[String]) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        let mut explicit = Vec::new();
        for id in matches.ids() {
            let id = id.as_str();
            let Some(v) = raw(matches, id) else { continue };
            match matches.value_source(id) {
                Some(ValueSource::DefaultValue) => {
                    values.insert(id.to_string(), v);
                }
                Some(_) => explicit.push((id.to_string(), v)),
                None => {}
            }
        }
        if let Some((_, path)) = explicit.iter().find(|(k, _)| k == "config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {path}: {e}")))?;
            for (k, v) in parse_kv(&text).map_err(|e| Failure::Usage(e.to_string()))? {
                let k = normalize_key(&k);
                if k == "config" || !known.contains(&k) {
                    return Err(Failure::Usage(format!("config {path}: unknown key {k:?}")));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in explicit {
            values.insert(k, v);
        }
        Ok(Settings { values })
    }

    #[cfg(test)]
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Settings {
            values: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::Usage(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| {
            Failure::Usage(format!(
                "missing --{}; pass it as a flag or set {key}= in the config",
                key.replace('_', "-")
            ))
        })
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.get::<PathBuf>(key)
    }

    pub fn flag(&self, key: &str) -> Result<bool, Failure> {
        Ok(self.opt::<bool>(key)?.unwrap_or(false))
    }

    pub fn out_dir(&self) -> Result<PathBuf, Failure> {
        let out = self.path("out")?;
        std::fs::create_dir_all(&out)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
        Ok(out)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "config")
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}

/// `key=value` lines: the command, every resolved setting, then extra records.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    settings: &Settings,
    extra: &[(String, String)],
) -> Result<(), Failure> {
    let mut text = format!("command={command}\nversion={}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in settings.entries() {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}
