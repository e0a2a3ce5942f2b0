use super::{EnsembleError, Result};

/// Dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(EnsembleError::Dimension(format!("{} values do not form rows of width {d}", data.len())));
        }
        Ok(Self { n: data.len() / d, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != d) {
            return Err(EnsembleError::Dimension("rows of unequal width".into()));
        }
        Self::new(d, rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { n: idx.len(), d: self.d, data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect() }
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let d = self.d;
        Self { n: self.n, d, data: self.data.iter().enumerate().map(|(k, &v)| f(k % d, v)).collect() }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(EnsembleError::NonFinite { row: k / self.d, col: k % self.d }),
            None => Ok(()),
        }
    }

    pub(crate) fn expect_width(&self, d: usize) -> Result<()> {
        if self.d != d {
            return Err(EnsembleError::Dimension(format!("model expects {d} features, got {}", self.d)));
        }
        Ok(())
    }
}
