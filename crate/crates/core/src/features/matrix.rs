use crate::error::{Error, Result};

/// Per-utterance feature frames, row-major, one row per 10 ms hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    utt_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data. Rejects non-finite entries.
    pub fn new(utt_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!("{} values do not form rows of width {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature matrix contains NaN/Inf".into()));
        }
        Ok(Self { utt_id: utt_id.into(), dim, data })
    }

    pub fn from_rows(utt_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::InvalidArgument("cannot infer dimension from zero rows".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(utt_id, dim, data)
    }

    pub fn utt_id(&self) -> &str {
        &self.utt_id
    }

    pub fn set_utt_id(&mut self, utt_id: impl Into<String>) {
        self.utt_id = utt_id.into();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Frames `[start, end)` as a new matrix with the same id.
    pub fn slice(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            utt_id: self.utt_id.clone(),
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// Keeps rows whose mask entry is true. Extra mask entries are ignored.
    pub fn select_rows(&self, mask: &[bool]) -> FeatureMatrix {
        let data = self.rows().zip(mask).filter(|(_, &keep)| keep).flat_map(|(r, _)| r.iter().copied()).collect();
        FeatureMatrix { utt_id: self.utt_id.clone(), dim: self.dim, data }
    }

    pub fn truncate(&mut self, frames: usize) {
        self.data.truncate(frames * self.dim);
    }

    pub(crate) fn subtract_mean(&mut self) {
        let t = self.num_frames();
        if t == 0 {
            return;
        }
        let mut mean = vec![0.0; self.dim];
        for r in self.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        for r in self.data.chunks_exact_mut(self.dim) {
            for (v, m) in r.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }

    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub(crate) fn empty(utt_id: impl Into<String>, dim: usize) -> Self {
        Self { utt_id: utt_id.into(), dim, data: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_ragged() {
        assert!(FeatureMatrix::new("u", 2, vec![1.0, f64::NAN]).is_err());
        assert!(FeatureMatrix::new("u", 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(FeatureMatrix::from_rows("u", &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn select_and_slice() {
        let m = FeatureMatrix::from_rows("u", &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(m.select_rows(&[true, false, true]).data(), &[1.0, 3.0]);
        assert_eq!(m.slice(1, 3).data(), &[2.0, 3.0]);
    }
}
