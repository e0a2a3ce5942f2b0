use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{EnsembleError, Features, Result};

pub const TABLE_HEADER: &str = "id,p_gray,p_gamma,p_invert,p_3ch,label";

/// Nodule probabilities of the four variant models for one sample, in the
/// column order gray, gamma, invert, 3-channel.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub id: String,
    pub p: [f64; 4],
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProbabilityTable {
    pub rows: Vec<TableRow>,
}

fn bad(msg: impl Into<String>) -> EnsembleError {
    EnsembleError::Table(msg.into())
}

impl ProbabilityTable {
    pub fn new(rows: Vec<TableRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.id.as_str()) {
                return Err(bad(format!("duplicate id {}", r.id)));
            }
            if r.id.is_empty() || r.id.contains([',', '\n', '\r']) {
                return Err(bad(format!("id '{}' cannot be written to csv", r.id)));
            }
            if let Some(p) = r.p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(bad(format!("probability {p} for {} outside [0, 1]", r.id)));
            }
            if r.label > 1 {
                return Err(bad(format!("label {} for {} is not binary", r.label, r.id)));
            }
        }
        Ok(Self { rows })
    }

    /// Assemble from one probability column per variant.
    pub fn from_columns(ids: &[String], columns: [&[f64]; 4], labels: &[u8]) -> Result<Self> {
        let n = ids.len();
        if labels.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(bad("columns of unequal length"));
        }
        let rows = (0..n)
            .map(|i| TableRow { id: ids[i].clone(), p: [columns[0][i], columns[1][i], columns[2][i], columns[3][i]], label: labels[i] })
            .collect();
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn features(&self) -> Features {
        Features::new(4, self.rows.iter().flat_map(|r| r.p).collect()).expect("four columns")
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.id == id)
    }

    /// CSV text; each comment becomes a leading `# ` line.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.id, r.p[0], r.p[1], r.p[2], r.p[3], r.label));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == TABLE_HEADER => {}
            Some((_, h)) => return Err(bad(format!("header '{h}' does not match '{TABLE_HEADER}'"))),
            None => return Err(bad("empty table")),
        }
        let mut rows = Vec::new();
        for (k, line) in lines {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("line {}: expected 6 fields, found {}", k + 1, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: '{s}' is not a number", k + 1)));
            let label = f[5].parse::<u8>().map_err(|_| bad(format!("line {}: bad label '{}'", k + 1, f[5])))?;
            rows.push(TableRow { id: f[0].to_string(), p: [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?], label });
        }
        Self::new(rows)
    }

    pub fn write(&self, path: &Path, comments: &[String]) -> Result<()> {
        fs::write(path, self.to_csv(comments)).map_err(|source| EnsembleError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| EnsembleError::Io { path: path.display().to_string(), source })?;
        Self::from_csv(&text)
    }
}
