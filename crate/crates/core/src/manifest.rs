//! Line-delimited JSON corpus index: one `{"id", "audio", "domain", "labels"}`
//! record per utterance, sorted by id.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::util::{read_to_string, write_file};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub domain: String,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Sorts by id and rejects duplicates.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in entries.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::data(&pair[0].id, "duplicate utterance id in manifest"));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Union of manifests; ids must stay unique.
    pub fn concat(parts: &[&Manifest]) -> Result<Self> {
        Self::new(
            parts
                .iter()
                .flat_map(|m| m.entries.iter().cloned())
                .collect(),
        )
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses JSONL; relative paths resolve against `base`.
    pub fn from_jsonl(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::format(origin, format!("line {}: {err}", lineno + 1)))?;
            if !seen.insert(e.id.clone()) {
                return Err(Error::data(&e.id, "duplicate utterance id in manifest"));
            }
            if e.audio.is_relative() {
                e.audio = base.join(&e.audio);
            }
            if e.labels.is_relative() && !e.labels.as_os_str().is_empty() {
                e.labels = base.join(&e.labels);
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_jsonl(&read_to_string(path)?, base, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_jsonl().as_bytes())
    }
}
