//! Sample batches: the unit over which all distance statistics are computed.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// An `n x p` matrix of real-valued feature vectors, one sample per row.
///
/// Invariants checked at construction: `n >= 1`, `p >= 1`, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: Array2<f64>,
}

impl SampleBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, p) = data.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "batch must be at least 1x1, got {n}x{p}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "batch contains non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Build from a flat row-major buffer.
    pub fn from_rows(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((n, p), values)
            .map_err(|e| Error::InvalidInput(format!("shape error: {e}")))?;
        Self::new(data)
    }

    /// Single-column batch from a vector of scalars.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_rows(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Batch holding the first `n` rows.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n() {
            return Err(Error::InvalidInput(format!(
                "cannot take {n} rows from a batch of {}",
                self.n()
            )));
        }
        Ok(Self {
            data: self.data.slice(ndarray::s![..n, ..]).to_owned(),
        })
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::InvalidInput("empty row selection".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidInput(format!(
                "row index {bad} out of range for batch of {}",
                self.n()
            )));
        }
        Ok(Self {
            data: self.data.select(ndarray::Axis(0), idx),
        })
    }

    /// Column-concatenate several batches sharing a sample count.
    pub fn concat_columns(parts: &[&SampleBatch]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("no batches to concatenate".into()))?;
        let n = first.n();
        if parts.iter().any(|b| b.n() != n) {
            return Err(Error::DimensionMismatch(
                "column concatenation requires equal sample counts".into(),
            ));
        }
        let views: Vec<_> = parts.iter().map(|b| b.view()).collect();
        let data = ndarray::concatenate(ndarray::Axis(1), &views)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(data)
    }
}

impl TryFrom<Array2<f64>> for SampleBatch {
    type Error = Error;

    fn try_from(data: Array2<f64>) -> Result<Self> {
        Self::new(data)
    }
}
