//! Delimited-text embedding files.
//!
//! A file has a header row naming its columns: `f0 .. f{d-1}` hold the
//! feature coordinates, `label` the class id and, optionally, `group` the
//! group id. Column order is free; features are ordered by their index.
//! A sidecar `<file>.manifest` with `n_classes = K` / `n_groups = m` lines
//! fixes the id ranges; without it they are inferred as `max id + 1`.
//! Row numbers in errors count data rows from 0 (the header is not a row).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{GsrError, Result};

/// Column roles of an embedding file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub feature_prefix: String,
    pub label_column: String,
    pub group_column: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            feature_prefix: "f".into(),
            label_column: "label".into(),
            group_column: "group".into(),
            delimiter: b',',
        }
    }
}

/// Sidecar declaring id ranges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_classes: Option<usize>,
    pub n_groups: Option<usize>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

pub fn read_manifest(path: &Path) -> Result<Option<Manifest>> {
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mpath).map_err(|e| GsrError::io(&mpath, e))?;
    let manifest = toml::from_str(&text).map_err(|e| GsrError::Parse {
        path: mpath.clone(),
        reason: e.to_string(),
    })?;
    Ok(Some(manifest))
}

pub fn load_embeddings(path: &Path, schema: &Schema) -> Result<EmbeddingDataset> {
    let manifest = read_manifest(path)?.unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| GsrError::io(path, e))?;
    parse_embeddings(&text, schema, manifest).map_err(|e| match e {
        GsrError::Parse { reason, .. } => GsrError::Parse {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// Parses file contents; `manifest` supplies declared id ranges.
pub fn parse_embeddings(
    text: &str,
    schema: &Schema,
    manifest: Manifest,
) -> Result<EmbeddingDataset> {
    if text.trim().is_empty() {
        return Err(GsrError::Empty("embedding file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| GsrError::Parse {
            path: PathBuf::new(),
            reason: format!("header: {e}"),
        })?
        .clone();

    let mut feature_cols: Vec<(usize, usize)> = Vec::new();
    let mut label_col = None;
    let mut group_col = None;
    for (c, name) in header.iter().enumerate() {
        if name == schema.label_column {
            label_col = Some(c);
        } else if name == schema.group_column {
            group_col = Some(c);
        } else if let Some(idx) = name
            .strip_prefix(schema.feature_prefix.as_str())
            .and_then(|s| s.parse::<usize>().ok())
        {
            feature_cols.push((idx, c));
        } else {
            return Err(GsrError::Parse {
                path: PathBuf::new(),
                reason: format!("unknown column `{name}`"),
            });
        }
    }
    let label_col = label_col.ok_or_else(|| GsrError::Parse {
        path: PathBuf::new(),
        reason: format!("missing `{}` column", schema.label_column),
    })?;
    feature_cols.sort_unstable();
    let d = feature_cols.len();
    if d == 0 {
        return Err(GsrError::Parse {
            path: PathBuf::new(),
            reason: "no feature columns".into(),
        });
    }
    if feature_cols.iter().enumerate().any(|(j, &(idx, _))| idx != j) {
        return Err(GsrError::Parse {
            path: PathBuf::new(),
            reason: format!("feature columns must be {0}0..{0}{1}", schema.feature_prefix, d - 1),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GsrError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(GsrError::MalformedRow {
                row,
                reason: format!("{} fields, expected {}", record.len(), header.len()),
            });
        }
        for (column, &(_, c)) in feature_cols.iter().enumerate() {
            let v: f64 = record[c].parse().map_err(|_| GsrError::MalformedRow {
                row,
                reason: format!("feature `{}` is not a number", &record[c]),
            })?;
            if !v.is_finite() {
                return Err(GsrError::NonFiniteFeature { row, column });
            }
            values.push(v);
        }
        labels.push(parse_id(&record[label_col], row, "label")?);
        if let (Some(gs), Some(c)) = (groups.as_mut(), group_col) {
            gs.push(parse_id(&record[c], row, "group")?);
        }
    }
    if labels.is_empty() {
        return Err(GsrError::Empty("embedding file has a header but no rows".into()));
    }
    let features = DMatrix::from_row_slice(labels.len(), d, &values);
    EmbeddingDataset::new(features, labels, groups, manifest.n_classes, manifest.n_groups)
}

fn parse_id(field: &str, row: usize, what: &str) -> Result<usize> {
    field.parse().map_err(|_| GsrError::MalformedRow {
        row,
        reason: format!("{what} `{field}` is not a nonnegative integer"),
    })
}

/// Serializes a dataset in the format [`load_embeddings`] reads.
///
/// Floats use the shortest representation that round-trips exactly, so
/// output is bytewise reproducible.
pub fn format_embeddings(ds: &EmbeddingDataset) -> String {
    let d = ds.dim();
    let mut out = String::new();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if ds.has_groups() {
        header.push("group".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds.x(i).iter().map(|v| format!("{v:?}")).collect();
        fields.push(ds.labels()[i].to_string());
        if let Some(gs) = ds.groups() {
            fields.push(gs[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes the data file and its manifest sidecar.
pub fn write_embeddings(path: &Path, ds: &EmbeddingDataset) -> Result<()> {
    fs::write(path, format_embeddings(ds)).map_err(|e| GsrError::io(path, e))?;
    let manifest = Manifest {
        n_classes: Some(ds.n_classes()),
        n_groups: ds.has_groups().then_some(ds.n_groups()),
    };
    let mpath = manifest_path(path);
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(&mpath, text).map_err(|e| GsrError::io(&mpath, e))
}
