use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two PAD classes. Bona fide is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    BonaFide,
    Attack,
}

impl Label {
    /// Classifier target: 1 for bona fide, 0 for attack.
    pub fn target(self) -> f64 {
        match self {
            Label::BonaFide => 1.0,
            Label::Attack => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::BonaFide => "bona_fide",
            Label::Attack => "attack",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bona_fide" => Ok(Label::BonaFide),
            "attack" => Ok(Label::Attack),
            other => Err(Error::InvalidArgument(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Eye {
    Left,
    Right,
    #[default]
    Unknown,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    /// Path as written in the manifest.
    pub path: String,
    pub label: Label,
    #[serde(default)]
    pub eye: Eye,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    /// Fields this crate does not interpret, kept for rewrites.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Entry {
    pub fn new(path: impl Into<String>, label: Label) -> Self {
        Entry {
            path: path.into(),
            label,
            eye: Eye::Unknown,
            subset: None,
            extra: Default::default(),
            root: PathBuf::new(),
        }
    }

    /// File location on disk.
    pub fn file(&self) -> PathBuf {
        self.root.join(&self.path)
    }
}

/// An ordered list of labeled image files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<Entry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rejects two entries that point at the same file.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.file()) {
                return Err(Error::Validation(format!("duplicate path {}", e.path)));
            }
        }
        Ok(())
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Concatenation of several manifests, validated.
    pub fn merge(parts: &[&DatasetManifest]) -> Result<Self> {
        let entries = parts
            .iter()
            .flat_map(|m| m.entries.iter().cloned())
            .collect();
        DatasetManifest::new(entries)
    }

    /// Writes JSON Lines. Paths are written as stored.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(|err| Error::Validation(err.to_string()))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSON Lines manifest. Relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut entry: Entry = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if entry.path.is_empty() {
            return Err(parse_err("empty path".into()));
        }
        entry.root = root.clone();
        entries.push(entry);
    }
    DatasetManifest::new(entries)
}
