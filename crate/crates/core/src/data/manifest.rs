use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three clinical classes in their canonical index order.
pub const CLINICAL_CLASSES: [&str; 3] = ["HGG", "LGG", "Healthy"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub subject_id: String,
}

/// Labelled volumes, one per subject, with a fixed label-to-index map.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    classes: Vec<String>,
}

/// Class order: the clinical classes when every label is one of them,
/// otherwise the sorted distinct labels.
fn class_order(entries: &[ManifestEntry]) -> Vec<String> {
    let present: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    if present.iter().all(|l| CLINICAL_CLASSES.contains(l)) {
        CLINICAL_CLASSES
            .iter()
            .filter(|c| present.contains(*c))
            .map(|c| c.to_string())
            .collect()
    } else {
        present.into_iter().map(str::to_string).collect()
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut paths = HashSet::new();
        let mut subjects = HashSet::new();
        for e in &entries {
            if e.label.is_empty() || e.subject_id.is_empty() {
                return Err(Error::format("manifest", format!("empty label or subject for {}", e.path.display())));
            }
            if !paths.insert(&e.path) {
                return Err(Error::format("path", format!("duplicate path {}", e.path.display())));
            }
            if !subjects.insert(&e.subject_id) {
                return Err(Error::format("subject_id", format!("duplicate subject {}", e.subject_id)));
            }
        }
        let classes = class_order(&entries);
        Ok(DatasetManifest { entries, classes })
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

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Class index of every entry, in entry order.
    pub fn labels(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.class_index(&e.label).expect("label registered at construction"))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    pub fn entry_by_subject(&self, subject: &str) -> Option<(usize, &ManifestEntry)> {
        self.entries.iter().enumerate().find(|(_, e)| e.subject_id == subject)
    }

    /// Reads a `path,label,subject_id` CSV. Relative paths are resolved
    /// against the manifest's directory.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        for required in ["path", "label", "subject_id"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::format("manifest header", format!("missing column '{required}'")));
            }
        }
        let mut entries = Vec::new();
        for row in reader.deserialize::<ManifestEntry>() {
            let mut e = row.map_err(|e| csv_error(path, e))?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    /// Writes the CSV; paths under the manifest's directory are stored
    /// relative to it.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            let rel = e.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone());
            writer
                .serialize(ManifestEntry {
                    path: rel,
                    label: e.label.clone(),
                    subject_id: e.subject_id.clone(),
                })
                .map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(format!("manifest {}", path.display()), e.to_string())
    }
}
