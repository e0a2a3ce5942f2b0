use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{io_err, DatasetError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub path: PathBuf,
    pub label: u8,
}

/// Labeled images; label 1 is the nodule class. Relative paths are resolved
/// against the manifest's directory at load time.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.label > 1 {
                return Err(DatasetError::Parameter(format!("record {i} ({}) has label {}", r.id, r.label)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::Parameter(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `[non-nodule, nodule]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.label as usize] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }
}

/// Parse a `id,path,label` CSV. Errors name the 1-based data row.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let p = path.display().to_string();
    let row_err = |row: usize, msg: String| DatasetError::Row { path: p.clone(), row, msg };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| row_err(0, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "path", "label"] {
        return Err(row_err(0, format!("header must be id,path,label, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| row_err(row_no, e.to_string()))?;
        let (id, rel, label) = (&row[0], &row[1], row[2].trim());
        if id.is_empty() {
            return Err(row_err(row_no, "empty id".into()));
        }
        let label: u8 = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(row_err(row_no, format!("label {other:?} is not 0 or 1"))),
        };
        if !seen.insert(id.to_string()) {
            return Err(row_err(row_no, format!("duplicate id {id}")));
        }
        let resolved = base.join(rel);
        if !resolved.is_file() {
            return Err(row_err(row_no, format!("missing image file {}", resolved.display())));
        }
        records.push(Record { id: id.to_string(), path: resolved, label });
    }
    Ok(DatasetManifest { records })
}

/// Write a manifest with paths relative to `path`'s directory when possible.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest, header_comment: Option<&str>) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::new();
    if let Some(c) = header_comment {
        out.push_str(&format!("# {c}\n"));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["id", "path", "label"]).map_err(|e| DatasetError::Format(e.to_string()))?;
    for r in &manifest.records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        w.write_record([r.id.as_str(), &rel.to_string_lossy(), &r.label.to_string()])
            .map_err(|e| DatasetError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| DatasetError::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    std::fs::write(path, out).map_err(io_err(path))
}
