// SPDX-License-Identifier: Apache-2.0

//! Pipeline configuration: command-line flags layered over an optional JSON
//! file, plus the provenance hash stamped into every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::exit::UsageError;

/// Flat JSON object whose keys are long flag names (`"alpha"`,
/// `"statistic-table"`, ...). Keys belonging to other commands are ignored
/// so that one file can drive a whole pipeline.
#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        match value {
            Value::Object(entries) => Ok(Self { entries }),
            _ => Err(UsageError(format!("config {} must be a JSON object", path.display())).into()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Fills every flag left unset on the command line from the file.
    pub fn fill<T: Serialize + DeserializeOwned>(&self, flags: &T) -> Result<T> {
        let mut value = serde_json::to_value(flags)?;
        if let Value::Object(fields) = &mut value {
            for (key, slot) in fields.iter_mut() {
                if slot.is_null() {
                    if let Some(v) = self.entries.get(key) {
                        *slot = v.clone();
                    }
                }
            }
        }
        serde_json::from_value(value).map_err(|e| UsageError(format!("config: {e}")).into())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything that determines a command's outputs. Input files enter by
/// content digest and the output directory is left out, so the same inputs
/// and flags give the same hash wherever they live.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub parameters: Value,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &'static str, seed: u64, flags: &T, inputs: &[(&str, &PathBuf)]) -> Result<Self> {
        let mut parameters = serde_json::to_value(flags)?;
        let mut digests = BTreeMap::new();
        if let Value::Object(fields) = &mut parameters {
            for (name, path) in inputs {
                fields.remove(*name);
                digests.insert(name.to_string(), file_digest(path)?);
            }
        }
        Ok(Self {
            command,
            seed,
            parameters,
            inputs: digests,
        })
    }

    pub fn hash(&self) -> String {
        // serde_json maps are ordered by key, so this encoding is canonical
        let text = serde_json::to_string(self).expect("provenance serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(rename_all = "kebab-case")]
    struct Flags {
        alpha: Option<f64>,
        neighbor_count: Option<usize>,
    }

    #[test]
    fn command_line_wins_over_file() {
        let mut entries = Map::new();
        entries.insert("alpha".into(), Value::from(0.05));
        entries.insert("neighbor-count".into(), Value::from(7));
        entries.insert("unrelated".into(), Value::from("x"));
        let cfg = ConfigFile { entries };
        let merged = cfg
            .fill(&Flags {
                alpha: Some(0.2),
                neighbor_count: None,
            })
            .unwrap();
        assert_eq!(
            merged,
            Flags {
                alpha: Some(0.2),
                neighbor_count: Some(7)
            }
        );
    }

    #[test]
    fn ill_typed_entries_are_usage_errors() {
        let mut entries = Map::new();
        entries.insert("alpha".into(), Value::from("high"));
        let err = ConfigFile { entries }
            .fill(&Flags {
                alpha: None,
                neighbor_count: None,
            })
            .unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
