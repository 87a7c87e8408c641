//! Dataset manifests: a `split/label/*.wav` directory tree or a CSV file
//! with header `path,split,label`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Training,
    Validation,
    Testing,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Training, Split::Validation, Split::Testing];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Training => "training",
            Split::Validation => "validation",
            Split::Testing => "testing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    /// Fake is the positive class.
    pub fn value(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_value(v: u8) -> Label {
        if v == 1 {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

macro_rules! display_parse {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s.trim())
                    .ok_or_else(|| format!("unknown {} {s:?}", $what))
            }
        }
    };
}

display_parse!(Split, "split");
display_parse!(Label, "label");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("split directory {0} is missing")]
    MissingSplit(Split),
    #[error("no {label} files in the {split} split")]
    EmptyClass { split: Split, label: Label },
    #[error("{0} is listed more than once")]
    DuplicatePath(PathBuf),
    #[error("{0} does not exist")]
    MissingFile(PathBuf),
    #[error("{path}, line {line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate paths and sorting entries by
    /// path.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        entries.sort();
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(ManifestError::DuplicatePath(e.path.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn counts(&self) -> BTreeMap<(Split, Label), usize> {
        let mut out = BTreeMap::new();
        for s in Split::ALL {
            for l in Label::ALL {
                out.insert((s, l), 0);
            }
        }
        for e in &self.entries {
            *out.get_mut(&(e.split, e.label)).expect("all keys present") += 1;
        }
        out
    }

    /// Every split has at least one file of each class.
    pub fn check_classes(&self) -> Result<(), ManifestError> {
        for ((split, label), n) in self.counts() {
            if n == 0 {
                return Err(ManifestError::EmptyClass { split, label });
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Loads `root/{training,validation,testing}/{real,fake}/*.wav`, or a CSV
/// manifest when `root` is a file.
pub fn load_manifest(root: &Path) -> Result<Manifest, ManifestError> {
    if root.is_file() {
        return load_manifest_csv(root);
    }
    let mut entries = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.as_str());
        if !dir.is_dir() {
            return Err(ManifestError::MissingSplit(split));
        }
        for label in Label::ALL {
            let class_dir = dir.join(label.as_str());
            if !class_dir.is_dir() {
                return Err(ManifestError::EmptyClass { split, label });
            }
            for item in std::fs::read_dir(&class_dir).map_err(io_err(&class_dir))? {
                let path = item.map_err(io_err(&class_dir))?.path();
                if is_wav(&path) {
                    entries.push(ManifestEntry { path, split, label });
                }
            }
        }
    }
    let m = Manifest::new(entries)?;
    m.check_classes()?;
    Ok(m)
}

#[derive(Deserialize)]
struct CsvRow {
    path: String,
    split: String,
    label: String,
}

/// CSV manifest; relative paths resolve against the CSV's directory.
pub fn load_manifest_csv(path: &Path) -> Result<Manifest, ManifestError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut entries = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = entries.len() as u64 + 2;
        let bad = |message: String| ManifestError::Csv {
            path: path.to_path_buf(),
            line,
            message,
        };
        let split = row.split.parse().map_err(bad)?;
        let label = row.label.parse().map_err(bad)?;
        let p = base.join(row.path.trim());
        if !p.is_file() {
            return Err(ManifestError::MissingFile(p));
        }
        entries.push(ManifestEntry { path: p, split, label });
    }
    for split in Split::ALL {
        if !entries.iter().any(|e| e.split == split) {
            return Err(ManifestError::MissingSplit(split));
        }
    }
    let m = Manifest::new(entries)?;
    m.check_classes()?;
    Ok(m)
}

fn csv_err(path: &Path, e: csv::Error) -> ManifestError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => ManifestError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => ManifestError::Csv {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}
