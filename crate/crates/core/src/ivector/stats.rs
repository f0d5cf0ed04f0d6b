//! Zeroth- and centered first-order Baum-Welch statistics.
//!
//! Stats file record: magic `SUSRBWST`, utt id, u32 C, u32 D, then N (C f64)
//! and F (C*D f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PosteriorSet;
use crate::binio::{len_u32, write_f64s, write_str, write_u32, LeReader};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::DiagGmm;

pub const STATS_MAGIC: &[u8; 8] = b"SUSRBWST";

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    pub utt_id: String,
    dim: usize,
    /// Soft occupancy per component.
    pub n: Vec<f64>,
    /// `C x D`, centered on the UBM means.
    pub f: Vec<f64>,
}

impl BaumWelchStats {
    pub fn new(utt_id: impl Into<String>, dim: usize, n: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if dim == 0 || n.is_empty() || f.len() != n.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "stats shapes disagree: {} occupancies, {} first-order values, dim {dim}",
                n.len(),
                f.len()
            )));
        }
        if n.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("stats must be finite with N >= 0".into()));
        }
        Ok(Self { utt_id: utt_id.into(), dim, n, f })
    }

    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn f_block(&self, c: usize) -> &[f64] {
        &self.f[c * self.dim..(c + 1) * self.dim]
    }

    pub fn total_occupancy(&self) -> f64 {
        self.n.iter().sum()
    }

    /// Both orders multiplied by `k`, as if the utterance had `k` times the data.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            utt_id: self.utt_id.clone(),
            dim: self.dim,
            n: self.n.iter().map(|v| v * k).collect(),
            f: self.f.iter().map(|v| v * k).collect(),
        }
    }
}

fn check_dims(ubm: &DiagGmm, features: &FeatureMatrix) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty(format!("utterance '{}' has no frames", features.utt_id())));
    }
    if features.dim() != ubm.dim() {
        return Err(Error::DimensionMismatch { expected: ubm.dim(), actual: features.dim() });
    }
    Ok(())
}

fn accumulate_with<F>(ubm: &DiagGmm, features: &FeatureMatrix, mut posterior: F) -> Result<BaumWelchStats>
where
    F: FnMut(usize, &[f64], &mut Vec<(usize, f64)>),
{
    let c = ubm.num_components();
    let d = ubm.dim();
    let mut n = vec![0.0; c];
    let mut f = vec![0.0; c * d];
    let mut gammas = Vec::with_capacity(c);
    for (t, x) in features.rows().enumerate() {
        gammas.clear();
        posterior(t, x, &mut gammas);
        for &(k, g) in &gammas {
            n[k] += g;
            let mu = ubm.mean(k);
            for i in 0..d {
                f[k * d + i] += g * (x[i] - mu[i]);
            }
        }
    }
    BaumWelchStats::new(features.utt_id(), d, n, f)
}

/// Statistics with component posteriors taken from the UBM itself.
pub fn accumulate_stats(ubm: &DiagGmm, features: &FeatureMatrix) -> Result<BaumWelchStats> {
    check_dims(ubm, features)?;
    let mut post = vec![0.0; ubm.num_components()];
    accumulate_with(ubm, features, |_, x, out| {
        ubm.posteriors_into(x, &mut post);
        out.extend(post.iter().copied().enumerate().filter(|(_, g)| *g > 0.0));
    })
}

/// Statistics with externally supplied posteriors (one class per UBM component).
pub fn accumulate_stats_external(
    posteriors: &PosteriorSet,
    ubm: &DiagGmm,
    features: &FeatureMatrix,
) -> Result<BaumWelchStats> {
    check_dims(ubm, features)?;
    if posteriors.num_frames() != features.num_frames() {
        return Err(Error::DimensionMismatch { expected: features.num_frames(), actual: posteriors.num_frames() });
    }
    if posteriors.num_classes() != ubm.num_components() {
        return Err(Error::DimensionMismatch { expected: ubm.num_components(), actual: posteriors.num_classes() });
    }
    accumulate_with(ubm, features, |t, _, out| out.extend(posteriors.normalized_row(t)))
}

/// A UBM whose components are the posterior classes: one weighted pass for
/// weights, means and variances, no EM.
pub fn train_supervised_ubm(
    features: &[FeatureMatrix],
    posteriors: &[PosteriorSet],
    num_classes: usize,
    min_occupancy: f64,
    variance_floor_fraction: f64,
) -> Result<DiagGmm> {
    if features.len() != posteriors.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), actual: posteriors.len() });
    }
    let d = features
        .iter()
        .find(|f| !f.is_empty())
        .map(|f| f.dim())
        .ok_or_else(|| Error::Empty("no training frames".into()))?;
    let mut occ = vec![0.0; num_classes];
    let mut sx = vec![0.0; num_classes * d];
    let mut sxx = vec![0.0; num_classes * d];
    let mut frames = 0.0;
    let mut gsum = vec![0.0; d];
    let mut gsq = vec![0.0; d];
    for (f, p) in features.iter().zip(posteriors) {
        if f.utt_id() != p.utt_id {
            return Err(Error::Missing { what: "posteriors", key: f.utt_id().to_string() });
        }
        if f.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: f.dim() });
        }
        if p.num_classes() != num_classes || p.num_frames() != f.num_frames() {
            return Err(Error::DimensionMismatch { expected: num_classes, actual: p.num_classes() });
        }
        for (t, x) in f.rows().enumerate() {
            frames += 1.0;
            for i in 0..d {
                gsum[i] += x[i];
                gsq[i] += x[i] * x[i];
            }
            for (k, g) in p.normalized_row(t) {
                occ[k] += g;
                for i in 0..d {
                    sx[k * d + i] += g * x[i];
                    sxx[k * d + i] += g * x[i] * x[i];
                }
            }
        }
    }
    let floor: Vec<f64> = (0..d)
        .map(|i| {
            let m = gsum[i] / frames;
            ((gsq[i] / frames - m * m) * variance_floor_fraction).max(1e-12)
        })
        .collect();
    let total: f64 = occ.iter().sum();
    let mut means = vec![0.0; num_classes * d];
    let mut vars = vec![0.0; num_classes * d];
    for k in 0..num_classes {
        if !(occ[k] > min_occupancy) {
            return Err(Error::StarvedClass { class: k, frames: occ[k], needed: min_occupancy });
        }
        for i in 0..d {
            let m = sx[k * d + i] / occ[k];
            means[k * d + i] = m;
            vars[k * d + i] = (sxx[k * d + i] / occ[k] - m * m).max(floor[i]);
        }
    }
    let weights = occ.iter().map(|o| o / total).collect();
    DiagGmm::new(weights, means, vars)
}

pub fn write_stats<W: Write>(w: &mut W, s: &BaumWelchStats) -> Result<()> {
    w.write_all(STATS_MAGIC)?;
    write_str(w, &s.utt_id)?;
    write_u32(w, len_u32(s.num_components(), "component count")?)?;
    write_u32(w, len_u32(s.dim, "dimension")?)?;
    write_f64s(w, &s.n)?;
    write_f64s(w, &s.f)?;
    Ok(())
}

pub fn read_stats<R: Read>(reader: R) -> Result<Vec<BaumWelchStats>> {
    let mut r = LeReader::new(reader, "Baum-Welch stats");
    let mut out = Vec::new();
    while r.magic_or_eof(STATS_MAGIC)? {
        let utt_id = r.string()?;
        let c = r.u32()? as usize;
        let d = r.u32()? as usize;
        if c.saturating_mul(d) > 1 << 28 {
            return Err(r.format_error("implausible shape"));
        }
        let n = r.f64s(c)?;
        let f = r.f64s(c * d)?;
        out.push(BaumWelchStats::new(utt_id, d, n, f).map_err(|e| r.format_error(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_stats_file(path: &Path) -> Result<Vec<BaumWelchStats>> {
    read_stats(BufReader::new(File::open(path)?))
}

pub fn write_stats_file(path: &Path, stats: &[BaumWelchStats]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in stats {
        write_stats(&mut w, s)?;
    }
    w.flush()?;
    Ok(())
}
