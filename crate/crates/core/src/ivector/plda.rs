//! Two-covariance PLDA: `y_s ~ N(mu, B)`, `x ~ N(y_s, W)`.
//!
//! Model file: magic `SUSRPLDA`, u32 R, u32 has_center, the length-norm
//! center (R f64) when present, then mu (R), B (R*R) and W (R*R), row-major.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::binio::{len_u32, write_f64s, write_u32, LeReader};
use crate::error::{Error, Result};

pub const PLDA_MAGIC: &[u8; 8] = b"SUSRPLDA";

/// Relative eigenvalue floor for a degenerate within-speaker covariance.
const W_FLOOR_REL: f64 = 1e-6;
const W_FLOOR_ABS: f64 = 1e-10;

/// Centering followed by projection onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthNorm {
    pub center: Vec<f64>,
}

impl LengthNorm {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| Error::Empty("no vectors to fit length norm".into()))?;
        let mut center = vec![0.0; first.len()];
        for v in vectors {
            if v.len() != center.len() {
                return Err(Error::DimensionMismatch { expected: center.len(), actual: v.len() });
            }
            for (c, x) in center.iter_mut().zip(v) {
                *c += x;
            }
        }
        let n = vectors.len() as f64;
        center.iter_mut().for_each(|c| *c /= n);
        Ok(Self { center })
    }

    /// A vector equal to the center maps to zero.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|x| *x /= norm);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PldaModel {
    mu: DVector<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    // score = 0.5 e'Qe + 0.5 t'Qt + e'Pt + k on centered vectors
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    k: f64,
}

impl PartialEq for PldaModel {
    fn eq(&self, o: &Self) -> bool {
        self.mu == o.mu && self.b == o.b && self.w == o.w
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn logdet_pd(m: &DMatrix<f64>, what: &str) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let ch = m.clone().cholesky().ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((ld, ch))
}

impl PldaModel {
    pub fn new(mu: Vec<f64>, b: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let r = mu.len();
        if r == 0 || b.shape() != (r, r) || w.shape() != (r, r) {
            return Err(Error::InvalidArgument(format!("PLDA shapes inconsistent with rank {r}")));
        }
        if mu.iter().chain(b.iter()).chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("PLDA parameters must be finite".into()));
        }
        let scale = b.iter().chain(w.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if (&b - b.transpose()).amax() > 1e-9 * scale || (&w - w.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Numerical("PLDA covariances must be symmetric".into()));
        }
        let b = symmetrize(&b);
        let w = symmetrize(&w);
        if b.clone().symmetric_eigenvalues().min() < -1e-9 * scale {
            return Err(Error::Numerical("between-speaker covariance is not PSD".into()));
        }
        logdet_pd(&w, "within-speaker covariance")?;
        let s = &b + &w;
        let (ld_s, ch_s) = logdet_pd(&s, "total covariance")?;
        let s_inv = symmetrize(&ch_s.inverse());
        let cond = symmetrize(&(&s - &b * &s_inv * &b));
        let (ld_c, ch_c) = logdet_pd(&cond, "conditional covariance")?;
        let c_inv = symmetrize(&ch_c.inverse());
        let q = &s_inv - &c_inv;
        let p = symmetrize(&(&s_inv * &b * &c_inv));
        Ok(Self { mu: DVector::from_vec(mu), b, w, q, p, k: 0.5 * ld_s - 0.5 * ld_c })
    }

    pub fn rank(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn between(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn within(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn half_score(&self, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
        0.5 * e.dot(&(&self.q * e)) + 0.5 * t.dot(&(&self.q * t)) + e.dot(&(&self.p * t)) + self.k
    }

    /// Same-speaker vs different-speaker log-likelihood ratio.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        for v in [enroll, test] {
            if v.len() != self.rank() {
                return Err(Error::DimensionMismatch { expected: self.rank(), actual: v.len() });
            }
        }
        let e = DVector::from_column_slice(enroll) - &self.mu;
        let t = DVector::from_column_slice(test) - &self.mu;
        // averaging both orders makes the score exactly symmetric in floating point
        Ok(0.5 * (self.half_score(&e, &t) + self.half_score(&t, &e)))
    }

    /// Marginal log-likelihood of one speaker's sessions.
    fn speaker_log_likelihood(&self, xs: &[DVector<f64>], w_inv: &DMatrix<f64>, ld_w: f64) -> Result<f64> {
        let r = self.rank() as f64;
        let n = xs.len() as f64;
        let mean = xs.iter().fold(DVector::zeros(self.rank()), |a, x| a + x) / n;
        let mut within = 0.0;
        for x in xs {
            let d = x - &mean;
            within += d.dot(&(w_inv * &d));
        }
        let cov = &self.b + &self.w / n;
        let (ld_cov, ch) = logdet_pd(&cov, "speaker mean covariance")?;
        let dm = &mean - &self.mu;
        let quad = dm.dot(&ch.solve(&dm));
        let ld_wn = ld_w - r * n.ln();
        Ok(-0.5 * n * r * (2.0 * PI).ln() - 0.5 * n * ld_w - 0.5 * within + 0.5 * r * (2.0 * PI).ln() + 0.5 * ld_wn
            - 0.5 * r * (2.0 * PI).ln()
            - 0.5 * ld_cov
            - 0.5 * quad)
    }
}

pub fn plda_score(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    model.score(enroll, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaTrace {
    /// Data log-likelihood at the initial parameters and after each iteration.
    pub log_likelihoods: Vec<f64>,
    pub floored: usize,
}

fn group(ivectors: &[(String, Vec<f64>)]) -> Result<(usize, Vec<Vec<DVector<f64>>>)> {
    let r = ivectors.first().map(|v| v.1.len()).ok_or_else(|| Error::Empty("no PLDA training vectors".into()))?;
    let mut by: BTreeMap<&str, Vec<DVector<f64>>> = BTreeMap::new();
    for (spk, v) in ivectors {
        if v.len() != r {
            return Err(Error::DimensionMismatch { expected: r, actual: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite training vector for '{spk}'")));
        }
        by.entry(spk).or_default().push(DVector::from_column_slice(v));
    }
    Ok((r, by.into_values().collect()))
}

fn floor_within(w: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let eig = symmetrize(w).symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return None;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    Some(symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose())))
}

/// EM training on `(speaker_id, vector)` pairs. Vectors are used as given;
/// apply [`LengthNorm`] beforehand when wanted.
pub fn train_plda(ivectors: &[(String, Vec<f64>)], iters: usize) -> Result<(PldaModel, PldaTrace)> {
    let (r, speakers) = group(ivectors)?;
    if speakers.len() < 2 {
        return Err(Error::InvalidArgument("PLDA needs at least two speakers".into()));
    }
    if speakers.iter().all(|s| s.len() < 2) {
        warn!("PLDA training: every speaker has one session; only B + W is identifiable");
    }
    let total_n: f64 = speakers.iter().map(|s| s.len() as f64).sum();
    let mu0 = speakers.iter().flatten().fold(DVector::zeros(r), |a, x| a + x) / total_n;
    let mut total_cov = DMatrix::zeros(r, r);
    for x in speakers.iter().flatten() {
        let d = x - &mu0;
        total_cov += &d * d.transpose();
    }
    total_cov /= total_n;
    let floor = (W_FLOOR_REL * total_cov.trace() / r as f64).max(W_FLOOR_ABS);

    let mut within = DMatrix::zeros(r, r);
    let mut multi = 0.0;
    for s in &speakers {
        if s.len() < 2 {
            continue;
        }
        let m = s.iter().fold(DVector::zeros(r), |a, x| a + x) / s.len() as f64;
        for x in s {
            let d = x - &m;
            within += &d * d.transpose();
        }
        multi += s.len() as f64;
    }
    let (mut b, mut w) = if multi > 0.0 {
        let w0 = &within / multi;
        let b0 = (&total_cov - &w0).symmetric_eigen();
        let b0 = &b0.eigenvectors
            * DMatrix::from_diagonal(&b0.eigenvalues.map(|v| v.max(floor)))
            * b0.eigenvectors.transpose();
        (symmetrize(&b0), w0)
    } else {
        (&total_cov * 0.5, &total_cov * 0.5)
    };
    let mut trace = PldaTrace { log_likelihoods: Vec::with_capacity(iters + 1), floored: 0 };
    if let Some(f) = floor_within(&w, floor) {
        w = f;
        trace.floored += 1;
    }
    let mut model = PldaModel::new(mu0.as_slice().to_vec(), b.clone(), w.clone())?;
    for _ in 0..iters {
        trace.log_likelihoods.push(data_log_likelihood(&model, &speakers)?);
        let mut post = Vec::with_capacity(speakers.len());
        for s in &speakers {
            let n = s.len() as f64;
            let mean = s.iter().fold(DVector::zeros(r), |a, x| a + x) / n;
            let cov = &b + &w / n;
            let ch = cov
                .cholesky()
                .ok_or_else(|| Error::Numerical("PLDA E-step covariance not positive definite".into()))?;
            // gain = B (B + W/n)^-1
            let gain = ch.solve(&b).transpose();
            let y = model.mu() + &gain * (&mean - model.mu());
            let cov_y = symmetrize(&(&b - &gain * &b));
            post.push((y, cov_y));
        }
        let s_count = speakers.len() as f64;
        let mu = post.iter().fold(DVector::zeros(r), |a, p| a + &p.0) / s_count;
        let mut nb = DMatrix::zeros(r, r);
        let mut nw = DMatrix::zeros(r, r);
        for (s, (y, cov_y)) in speakers.iter().zip(&post) {
            let d = y - &mu;
            nb += cov_y + &d * d.transpose();
            for x in s {
                let e = x - y;
                nw += &e * e.transpose() + cov_y;
            }
        }
        b = symmetrize(&(nb / s_count));
        w = symmetrize(&(nw / total_n));
        if let Some(f) = floor_within(&w, floor) {
            w = f;
            trace.floored += 1;
        }
        model = PldaModel::new(mu.as_slice().to_vec(), b.clone(), w.clone())?;
    }
    trace.log_likelihoods.push(data_log_likelihood(&model, &speakers)?);
    Ok((model, trace))
}

fn data_log_likelihood(model: &PldaModel, speakers: &[Vec<DVector<f64>>]) -> Result<f64> {
    let (ld_w, ch_w) = logdet_pd(model.within(), "within-speaker covariance")?;
    let w_inv = ch_w.inverse();
    speakers.iter().map(|s| model.speaker_log_likelihood(s, &w_inv, ld_w)).sum()
}

pub fn write_plda<W: Write>(w: &mut W, norm: Option<&LengthNorm>, model: &PldaModel) -> Result<()> {
    let r = model.rank();
    w.write_all(PLDA_MAGIC)?;
    write_u32(w, len_u32(r, "rank")?)?;
    write_u32(w, norm.is_some() as u32)?;
    if let Some(n) = norm {
        if n.center.len() != r {
            return Err(Error::DimensionMismatch { expected: r, actual: n.center.len() });
        }
        write_f64s(w, &n.center)?;
    }
    write_f64s(w, model.mu.as_slice())?;
    write_f64s(w, model.b.transpose().as_slice())?;
    write_f64s(w, model.w.transpose().as_slice())?;
    Ok(())
}

pub fn read_plda<R: Read>(reader: R) -> Result<(Option<LengthNorm>, PldaModel)> {
    let mut r = LeReader::new(reader, "PLDA");
    r.expect_magic(PLDA_MAGIC)?;
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 1 << 12 {
        return Err(r.format_error(format!("implausible rank {rank}")));
    }
    let norm = match r.u32()? {
        0 => None,
        1 => Some(LengthNorm { center: r.f64s(rank)? }),
        v => return Err(r.format_error(format!("bad length-norm flag {v}"))),
    };
    let mu = r.f64s(rank)?;
    let b = DMatrix::from_row_slice(rank, rank, &r.f64s(rank * rank)?);
    let w = DMatrix::from_row_slice(rank, rank, &r.f64s(rank * rank)?);
    let model = PldaModel::new(mu, b, w).map_err(|e| r.format_error(e.to_string()))?;
    Ok((norm, model))
}

pub fn write_plda_file(path: &Path, norm: Option<&LengthNorm>, model: &PldaModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_plda(&mut w, norm, model)?;
    w.flush()?;
    Ok(())
}

pub fn read_plda_file(path: &Path) -> Result<(Option<LengthNorm>, PldaModel)> {
    read_plda(BufReader::new(File::open(path)?))
}
