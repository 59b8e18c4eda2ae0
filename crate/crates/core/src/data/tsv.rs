//! Tab-separated corpus files: `id<TAB>text<TAB>label[<TAB>language]`.
//!
//! UTF-8, one header row, no quoting. A tab inside a field shows up as an
//! extra column and is rejected.

use std::fmt::Write as _;
use std::path::Path;

use super::task::{Sample, TaskSpec};
use crate::error::{Error, Result};

const REQUIRED: [&str; 3] = ["id", "text", "label"];
const LANGUAGE: &str = "language";

/// Row filtering applied while loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TsvSchema {
    /// Keep only rows whose `language` column equals this code. Ignored for
    /// files without a language column.
    pub language: Option<String>,
}

impl Default for TsvSchema {
    fn default() -> Self {
        TsvSchema {
            language: Some("es".to_string()),
        }
    }
}

/// Reads labeled samples for `task`, mapping label names to class indices.
pub fn load_tsv(path: &Path, task: &TaskSpec, schema: &TsvSchema) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path, task, schema)
}

pub(crate) fn parse_tsv(
    text: &str,
    path: &Path,
    task: &TaskSpec,
    schema: &TsvSchema,
) -> Result<Vec<Sample>> {
    let err = |line: usize, message: String| Error::Data {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim_end_matches('\r'),
            None => return Err(err(1, "empty file".into())),
        }
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    for (i, name) in REQUIRED.iter().enumerate() {
        match columns.get(i) {
            Some(c) if c == name => {}
            Some(c) => {
                return Err(err(
                    1,
                    format!(
                        "expected column {name:?} at position {}, found {c:?}",
                        i + 1
                    ),
                ))
            }
            None => return Err(err(1, format!("missing column {name:?}"))),
        }
    }
    let has_language = match columns.get(3) {
        None => false,
        Some(&c) if c == LANGUAGE => true,
        Some(c) => return Err(err(1, format!("unexpected column {c:?}"))),
    };
    if columns.len() > 4 {
        return Err(err(1, format!("unexpected column {:?}", columns[4])));
    }

    let mut samples = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(err(
                line_no,
                format!(
                    "expected {} fields, found {} (embedded tab?)",
                    columns.len(),
                    fields.len()
                ),
            ));
        }
        if has_language {
            if let Some(lang) = &schema.language {
                if fields[3].trim() != lang {
                    continue;
                }
            }
        }
        let label_name = fields[2].trim();
        let label = task.label_index(label_name).ok_or_else(|| {
            err(
                line_no,
                format!(
                    "unknown label {label_name:?} for task {:?} (expected one of {:?})",
                    task.name, task.labels
                ),
            )
        })?;
        samples.push(Sample {
            id: fields[0].to_string(),
            text: fields[1].to_string(),
            label,
        });
    }
    if samples.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    Ok(samples)
}

/// Writes samples in the three-column layout.
pub fn write_tsv(path: &Path, task: &TaskSpec, samples: &[Sample]) -> Result<()> {
    let mut out = String::from("id\ttext\tlabel\n");
    for s in samples {
        if s.id.contains(['\t', '\n']) || s.text.contains(['\t', '\n']) {
            return Err(Error::invalid(format!(
                "sample {:?} contains a tab or newline",
                s.id
            )));
        }
        let label = task.labels.get(s.label).ok_or(Error::Index {
            what: "task labels",
            index: s.label,
            bound: task.labels.len(),
        })?;
        let _ = writeln!(out, "{}\t{}\t{}", s.id, s.text, label);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
