//! Plain-text `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are skipped. Keys may
//! use `-` or `_` interchangeably.

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::arg(format!(
                "line {}: expected key=value, got {raw:?}",
                lineno + 1
            ))
        })?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(Error::arg(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::arg(format!("bad value for {key}: {value:?}")))
}
