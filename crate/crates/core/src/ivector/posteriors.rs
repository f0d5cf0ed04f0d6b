//! External frame posteriors ("DNN-style" supervision).
//!
//! Binary record: magic `SUSRPOST`, u32 version, utt id, u32 T, u32 K, then
//! per frame a u16 entry count followed by `(u32 class_index, f32 prob)`
//! pairs. Rows may be pruned to their top entries; they are renormalized
//! whenever they are used, never in storage, so files round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{len_u32, write_f32, write_str, write_u16, write_u32, LeReader};
use crate::error::{Error, Result};

pub const POSTERIOR_MAGIC: &[u8; 8] = b"SUSRPOST";
const POSTERIOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    pub utt_id: String,
    num_classes: usize,
    rows: Vec<Vec<(u32, f32)>>,
}

impl PosteriorSet {
    pub fn new(utt_id: impl Into<String>, num_classes: usize, rows: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        let utt_id = utt_id.into();
        if num_classes == 0 {
            return Err(Error::InvalidArgument("posterior class count must be >= 1".into()));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.is_empty() || row.len() > u16::MAX as usize {
                return Err(Error::InvalidArgument(format!(
                    "posterior row {t} of '{utt_id}' has {} entries",
                    row.len()
                )));
            }
            let mut sum = 0.0f64;
            for &(k, p) in row {
                if k as usize >= num_classes {
                    return Err(Error::InvalidArgument(format!("class index {k} >= {num_classes} in row {t}")));
                }
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidArgument(format!("bad probability {p} in row {t}")));
                }
                sum += p as f64;
            }
            if !(sum > 0.0) {
                return Err(Error::InvalidArgument(format!("posterior row {t} of '{utt_id}' has zero mass")));
            }
        }
        Ok(Self { utt_id, num_classes, rows })
    }

    /// One-hot rows from hard class labels.
    pub fn one_hot(utt_id: impl Into<String>, num_classes: usize, labels: &[usize]) -> Result<Self> {
        let rows = labels.iter().map(|&k| vec![(k as u32, 1.0f32)]).collect();
        Self::new(utt_id, num_classes, rows)
    }

    /// Sparse rows from dense ones, keeping at most `top_n` entries per row
    /// (all when `None`) and dropping exact zeros.
    pub fn from_dense(utt_id: impl Into<String>, dense: &[Vec<f64>], top_n: Option<usize>) -> Result<Self> {
        let k = dense.first().map(|r| r.len()).unwrap_or(1);
        let rows = dense
            .iter()
            .map(|r| {
                let mut entries: Vec<(u32, f32)> =
                    r.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(i, p)| (i as u32, *p as f32)).collect();
                if let Some(n) = top_n {
                    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    entries.truncate(n.max(1));
                    entries.sort_by_key(|e| e.0);
                }
                entries
            })
            .collect();
        Self::new(utt_id, k, rows)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_frames(&self) -> usize {
        self.rows.len()
    }

    pub fn raw_rows(&self) -> &[Vec<(u32, f32)>] {
        &self.rows
    }

    /// Row `t` renormalized to sum to one.
    pub fn normalized_row(&self, t: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let row = &self.rows[t];
        let sum: f64 = row.iter().map(|e| e.1 as f64).sum();
        row.iter().map(move |&(k, p)| (k as usize, p as f64 / sum))
    }

    /// Dense `T x K` normalized posteriors.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.num_frames())
            .map(|t| {
                let mut row = vec![0.0; self.num_classes];
                for (k, p) in self.normalized_row(t) {
                    row[k] += p;
                }
                row
            })
            .collect()
    }

    pub fn truncate(&mut self, frames: usize) {
        self.rows.truncate(frames);
    }
}

pub fn write_posteriors<W: Write>(w: &mut W, p: &PosteriorSet) -> Result<()> {
    w.write_all(POSTERIOR_MAGIC)?;
    write_u32(w, POSTERIOR_VERSION)?;
    write_str(w, &p.utt_id)?;
    write_u32(w, len_u32(p.num_frames(), "frame count")?)?;
    write_u32(w, len_u32(p.num_classes, "class count")?)?;
    for row in &p.rows {
        write_u16(w, row.len() as u16)?;
        for &(k, prob) in row {
            write_u32(w, k)?;
            write_f32(w, prob)?;
        }
    }
    Ok(())
}

pub fn read_posteriors<R: Read>(reader: R) -> Result<Vec<PosteriorSet>> {
    let mut r = LeReader::new(reader, "posterior");
    let mut out = Vec::new();
    while r.magic_or_eof(POSTERIOR_MAGIC)? {
        let version = r.u32()?;
        if version != POSTERIOR_VERSION {
            return Err(r.format_error(format!("unsupported version {version}")));
        }
        let utt_id = r.string()?;
        let t = r.u32()? as usize;
        let k = r.u32()? as usize;
        let mut rows = Vec::with_capacity(t.min(1 << 20));
        for _ in 0..t {
            let n = r.u16()? as usize;
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let idx = r.u32()?;
                let p = r.f32()?;
                row.push((idx, p));
            }
            rows.push(row);
        }
        out.push(PosteriorSet::new(utt_id, k, rows).map_err(|e| r.format_error(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_posteriors_file(path: &Path) -> Result<Vec<PosteriorSet>> {
    read_posteriors(BufReader::new(File::open(path)?))
}

pub fn write_posteriors_file(path: &Path, sets: &[PosteriorSet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in sets {
        write_posteriors(&mut w, p)?;
    }
    w.flush()?;
    Ok(())
}
