//! Deterministic replay fixtures standing in for the live model.
//!
//! Fixtures live in a directory of JSONL files, one object per line with
//! `narrative_id`, `variant`, and `response`. Responses are stored and
//! returned byte-exactly, keyed by (narrative id, prompt variant).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("failed to read fixtures at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file} line {line}: invalid fixture object: {source}")]
    Parse {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate fixture for narrative {narrative_id:?} variant {variant:?}")]
    Duplicate {
        narrative_id: String,
        variant: String,
    },
    #[error("no fixture files found under {path}")]
    NoFixtures { path: String },
}

/// One stored model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub narrative_id: String,
    pub variant: String,
    pub response: String,
}

/// Read-only fixture store, loaded once and safely shared across threads.
#[derive(Debug, Default)]
pub struct ReplayStore {
    entries: HashMap<(String, String), String>,
}

impl ReplayStore {
    pub fn from_entries(entries: Vec<FixtureEntry>) -> Result<Self, ReplayError> {
        let mut map = HashMap::with_capacity(entries.len());
        for entry in entries {
            let key = (entry.narrative_id.clone(), entry.variant.clone());
            if map.insert(key, entry.response).is_some() {
                return Err(ReplayError::Duplicate {
                    narrative_id: entry.narrative_id,
                    variant: entry.variant,
                });
            }
        }
        Ok(ReplayStore { entries: map })
    }

    /// Load every `*.jsonl` file under `dir` (sorted by name).
    pub fn load_dir(dir: &Path) -> Result<Self, ReplayError> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|source| ReplayError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(ReplayError::NoFixtures {
                path: dir.display().to_string(),
            });
        }
        let mut entries = Vec::new();
        for file in &files {
            let reader =
                BufReader::new(fs::File::open(file).map_err(|source| ReplayError::Io {
                    path: file.display().to_string(),
                    source,
                })?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|source| ReplayError::Io {
                    path: file.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: FixtureEntry =
                    serde_json::from_str(&line).map_err(|source| ReplayError::Parse {
                        file: file.display().to_string(),
                        line: idx + 1,
                        source,
                    })?;
                entries.push(entry);
            }
        }
        Self::from_entries(entries)
    }

    pub fn lookup(&self, narrative_id: &str, variant: &str) -> Option<&str> {
        self.entries
            .get(&(narrative_id.to_string(), variant.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Write fixture entries as one JSONL file, in the order given.
pub fn write_fixtures(path: &Path, entries: &[FixtureEntry]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
