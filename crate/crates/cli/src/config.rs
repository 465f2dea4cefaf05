//! Layered parameters: built-in defaults, then the TOML config file, then flags.
//!
//! A config file may set shared keys at the top level and per-command keys
//! in a table named after the command:
//!
//! ```toml
//! seed = 7
//! kernel = "matern32"
//!
//! [bench]
//! ns = [1000, 2500, 5000]
//! ```
//!
//! Top-level keys apply only to commands that have a parameter of that name.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

pub fn load(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("cannot parse config {}", path.display()))
}

/// Top-level scalar from the config file, e.g. `seed`.
pub fn top_level<T: DeserializeOwned>(file: Option<&Table>, key: &str) -> Result<Option<T>> {
    match file.and_then(|t| t.get(key)) {
        Some(v) => Ok(Some(
            v.clone().try_into().with_context(|| format!("config key '{key}'"))?,
        )),
        None => Ok(None),
    }
}

/// Merges defaults, the config file and explicit flags, later layers winning.
///
/// `flags` must serialize only the options the user actually passed.
pub fn resolve<P, F>(command: &str, file: Option<&Table>, flags: &F) -> Result<P>
where
    P: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = Table::try_from(P::default()).context("serializing defaults")?;
    if let Some(file) = file {
        let known: Vec<String> = merged.keys().cloned().collect();
        for (k, v) in file {
            if !v.is_table() && known.contains(k) {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(section) = file.get(command) {
            let Value::Table(section) = section else {
                anyhow::bail!("config entry '{command}' must be a table");
            };
            merged.extend(section.clone());
        }
    }
    merged.extend(Table::try_from(flags).context("serializing flags")?);
    Value::Table(merged)
        .try_into()
        .with_context(|| format!("invalid parameters for '{command}'"))
}
