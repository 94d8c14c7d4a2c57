//! The `path,label,split` manifest that binds image files to classes and splits.
//!
//! Paths are relative to the manifest's directory unless absolute. A label
//! is either a class id or a class name from the configured class list.
//! Errors carry the 1-based line number (the header is line 1).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

pub const HEADER: [&str; 3] = ["path", "label", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}, expected train, val or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    /// Resolved against the manifest directory.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
    pub line: u64,
}

/// Class-name comparison key: case-insensitive, `-`, `_` and spaces ignored.
pub fn name_key(name: &str) -> String {
    name.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).flat_map(char::to_lowercase).collect()
}

fn parse_label(raw: &str, classes: &[String]) -> Result<usize, String> {
    if let Ok(id) = raw.parse::<usize>() {
        return if id < classes.len() {
            Ok(id)
        } else {
            Err(format!("label {id} is out of range for {} classes", classes.len()))
        };
    }
    let key = name_key(raw);
    classes
        .iter()
        .position(|c| name_key(c) == key)
        .ok_or_else(|| format!("unknown label {raw:?}"))
}

/// Parses manifest text. `source` names the file in error messages and
/// `base` is the directory relative paths hang off. With `check_files`,
/// every referenced path must be an existing file.
pub fn parse(text: &str, source: &str, base: &Path, classes: &[String], check_files: bool) -> Result<Vec<SampleRecord>> {
    let err = |line: u64, msg: String| CliError::Data(format!("{source}:{line}: {msg}"));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(err(1, format!("header must be `{}`", HEADER.join(","))));
    }
    let mut records: Vec<SampleRecord> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let (raw_path, raw_label, raw_split) = (&row[0], &row[1], &row[2]);
        if raw_path.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let label = parse_label(raw_label, classes).map_err(|m| err(line, m))?;
        let split = raw_split.parse::<Split>().map_err(|m| err(line, m))?;
        let path = base.join(raw_path);
        if let Some(first) = seen.insert(path.clone(), line) {
            return Err(err(line, format!("duplicate path {raw_path} (first listed on line {first})")));
        }
        if check_files && !path.is_file() {
            return Err(err(line, format!("missing file {}", path.display())));
        }
        records.push(SampleRecord { path, label, split, line });
    }
    Ok(records)
}

/// Reads and validates a manifest file, checking that every image exists.
pub fn load(path: &Path, classes: &[String]) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse(&text, &path.display().to_string(), base, classes, true)
}

/// Serializes rows of `(relative path, label text, split)`.
pub fn to_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, Split)>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for (path, label, split) in rows {
        w.write_record([path, label, split.as_str()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of UTF-8 fields")
}
