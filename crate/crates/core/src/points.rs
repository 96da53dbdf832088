use crate::error::{Error, Result};

/// Row-major N×D matrix of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    values: Vec<f64>,
    dims: usize,
}

impl Points {
    pub fn new(values: Vec<f64>, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Config("points need at least one dimension".into()));
        }
        if !values.len().is_multiple_of(dims) {
            return Err(Error::Config(format!(
                "{} values do not form rows of length {dims}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite value {v}")));
        }
        Ok(Points { values, dims })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::Config("rows have different lengths".into()));
        }
        Self::new(rows.concat(), dims)
    }

    pub fn empty(dims: usize) -> Self {
        Points {
            values: Vec::new(),
            dims,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dims)
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dims, "row length");
        self.values.extend_from_slice(row);
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points::empty(self.dims);
        for &i in indices {
            out.push(self.row(i));
        }
        out
    }
}
