//! Total-variability model: T-matrix EM, i-vector extraction, cosine scoring.
//!
//! Extractor file: magic `SUSRIVX1`, an embedded GMM record, u32 R, then the
//! C blocks of T (each D x R, row-major f64).
//! I-vector file: magic `SUSRIVEC`, utt id, u32 R, R f64; archives concatenate
//! records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::BaumWelchStats;
use crate::binio::{len_u32, write_f64s, write_str, write_u32, LeReader};
use crate::error::{Error, Result};
use crate::gmm::{write_gmm, DiagGmm};

pub const EXTRACTOR_MAGIC: &[u8; 8] = b"SUSRIVX1";
pub const IVECTOR_MAGIC: &[u8; 8] = b"SUSRIVEC";

const CHUNK: usize = 8;
const SINGULAR_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct IVectorExtractor {
    ubm: DiagGmm,
    rank: usize,
    t: Vec<DMatrix<f64>>,
    // T_c^T Sigma_c^-1 and T_c^T Sigma_c^-1 T_c
    t_sig: Vec<DMatrix<f64>>,
    t_sig_t: Vec<DMatrix<f64>>,
}

impl PartialEq for IVectorExtractor {
    fn eq(&self, other: &Self) -> bool {
        self.ubm == other.ubm && self.rank == other.rank && self.t == other.t
    }
}

impl IVectorExtractor {
    /// `t_blocks[c]` is the `D x R` block of component `c`.
    pub fn new(ubm: DiagGmm, t_blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let c = ubm.num_components();
        let d = ubm.dim();
        let rank = t_blocks.first().map(|b| b.ncols()).unwrap_or(0);
        if rank == 0 {
            return Err(Error::InvalidArgument("i-vector rank must be >= 1".into()));
        }
        if t_blocks.len() != c || t_blocks.iter().any(|b| b.nrows() != d || b.ncols() != rank) {
            return Err(Error::InvalidArgument(format!("T blocks must be {c} matrices of {d} x {rank}")));
        }
        if t_blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("T matrix has non-finite entries".into()));
        }
        let t_sig: Vec<DMatrix<f64>> = t_blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let mut m = b.transpose();
                for (j, v) in ubm.var(k).iter().enumerate() {
                    m.column_mut(j).scale_mut(1.0 / v);
                }
                m
            })
            .collect();
        let t_sig_t = t_sig.iter().zip(&t_blocks).map(|(a, b)| a * b).collect();
        Ok(Self { ubm, rank, t: t_blocks, t_sig, t_sig_t })
    }

    pub fn ubm(&self) -> &DiagGmm {
        &self.ubm
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn t_blocks(&self) -> &[DMatrix<f64>] {
        &self.t
    }

    /// The `(C*D) x R` stacked T matrix.
    pub fn stacked_t(&self) -> DMatrix<f64> {
        let d = self.ubm.dim();
        let mut out = DMatrix::zeros(self.t.len() * d, self.rank);
        for (k, b) in self.t.iter().enumerate() {
            out.view_mut((k * d, 0), (d, self.rank)).copy_from(b);
        }
        out
    }

    fn check(&self, stats: &BaumWelchStats) -> Result<()> {
        if stats.num_components() != self.ubm.num_components() {
            return Err(Error::DimensionMismatch {
                expected: self.ubm.num_components(),
                actual: stats.num_components(),
            });
        }
        if stats.dim() != self.ubm.dim() {
            return Err(Error::DimensionMismatch { expected: self.ubm.dim(), actual: stats.dim() });
        }
        Ok(())
    }

    /// Precision `L` and linear term `b` of the latent posterior.
    fn precision_and_linear(&self, stats: &BaumWelchStats) -> (DMatrix<f64>, DVector<f64>) {
        let mut l = DMatrix::identity(self.rank, self.rank);
        let mut b = DVector::zeros(self.rank);
        for k in 0..self.t.len() {
            let n = stats.n[k];
            if n > 0.0 {
                l += &self.t_sig_t[k] * n;
            }
            let f = DVector::from_column_slice(stats.f_block(k));
            b += &self.t_sig[k] * f;
        }
        (l, b)
    }

    /// Posterior mean and covariance of the latent factor, plus the
    /// utterance term `0.5 b' L^-1 b - 0.5 ln|L|` of the marginal likelihood.
    fn posterior_full(&self, stats: &BaumWelchStats) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        self.check(stats)?;
        let (l, b) = self.precision_and_linear(stats);
        let w = solve_mean(&l, &b)?;
        let chol = l.cholesky().ok_or_else(|| Error::Numerical("latent precision not positive definite".into()))?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let obj = 0.5 * b.dot(&w) - 0.5 * logdet;
        Ok((w, chol.inverse(), obj))
    }

    /// Posterior mean (the i-vector) and covariance `L^-1`.
    pub fn posterior(&self, stats: &BaumWelchStats) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.posterior_full(stats).map(|(w, cov, _)| (w, cov))
    }

    pub fn extract(&self, stats: &BaumWelchStats) -> Result<Vec<f64>> {
        self.check(stats)?;
        let (l, b) = self.precision_and_linear(stats);
        Ok(solve_mean(&l, &b)?.as_slice().to_vec())
    }

    /// Marginal log-likelihood of the first-order stats up to a T-independent
    /// constant; T-matrix EM never decreases it.
    pub fn objective(&self, stats: &[BaumWelchStats]) -> Result<f64> {
        let parts = stats
            .par_chunks(CHUNK)
            .map(|chunk| chunk.iter().map(|s| self.posterior_full(s).map(|p| p.2)).sum::<Result<f64>>())
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }
}

/// `L^-1 b` by LU: one division per pivot, so the scalar case is exactly
/// `b / L`. Cholesky would divide by `sqrt(L)` twice.
fn solve_mean(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    l.clone().lu().solve(b).ok_or_else(|| Error::Numerical("latent precision is singular".into()))
}

pub fn extract_ivector(ext: &IVectorExtractor, stats: &BaumWelchStats) -> Result<Vec<f64>> {
    ext.extract(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TMatrixTrace {
    /// Objective before the first iteration and after each one.
    pub objectives: Vec<f64>,
    pub regularized: usize,
}

struct Accum {
    c: Vec<DMatrix<f64>>,
    a: Vec<DMatrix<f64>>,
    obj: f64,
}

impl Accum {
    fn zeros(comps: usize, d: usize, r: usize) -> Self {
        Self { c: vec![DMatrix::zeros(d, r); comps], a: vec![DMatrix::zeros(r, r); comps], obj: 0.0 }
    }

    fn add(&mut self, o: &Accum) {
        for (x, y) in self.c.iter_mut().zip(&o.c) {
            *x += y;
        }
        for (x, y) in self.a.iter_mut().zip(&o.a) {
            *x += y;
        }
        self.obj += o.obj;
    }
}

fn e_step(ext: &IVectorExtractor, stats: &[BaumWelchStats]) -> Result<Accum> {
    let comps = ext.ubm.num_components();
    let d = ext.ubm.dim();
    let r = ext.rank;
    let parts = stats
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum::zeros(comps, d, r);
            for s in chunk {
                let (w, cov, obj) = ext.posterior_full(s)?;
                let eww = cov + &w * w.transpose();
                for k in 0..comps {
                    let f = DVector::from_column_slice(s.f_block(k));
                    acc.c[k] += f * w.transpose();
                    if s.n[k] > 0.0 {
                        acc.a[k] += &eww * s.n[k];
                    }
                }
                acc.obj += obj;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<Accum>>>()?;
    let mut total = Accum::zeros(comps, d, r);
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// EM for the total-variability matrix. T starts as seeded N(0, 1) * 0.1.
pub fn train_t_matrix(
    stats: &[BaumWelchStats],
    ubm: &DiagGmm,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<(IVectorExtractor, TMatrixTrace)> {
    if rank == 0 {
        return Err(Error::InvalidArgument("i-vector rank must be >= 1".into()));
    }
    if !stats.iter().any(|s| s.total_occupancy() > 0.0) {
        return Err(Error::Empty("no statistics with nonzero occupancy".into()));
    }
    for s in stats {
        if s.num_components() != ubm.num_components() || s.dim() != ubm.dim() {
            return Err(Error::DimensionMismatch {
                expected: ubm.num_components() * ubm.dim(),
                actual: s.num_components() * s.dim(),
            });
        }
    }
    let d = ubm.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..ubm.num_components())
        .map(|_| {
            DMatrix::from_fn(d, rank, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.1 * z
            })
        })
        .collect();
    let mut ext = IVectorExtractor::new(ubm.clone(), blocks)?;
    let mut trace = TMatrixTrace { objectives: Vec::with_capacity(iters + 1), regularized: 0 };
    for it in 0..iters {
        let acc = e_step(&ext, stats)?;
        trace.objectives.push(acc.obj);
        let mut blocks = Vec::with_capacity(acc.a.len());
        for (k, (c, a)) in acc.c.iter().zip(&acc.a).enumerate() {
            let at = a.transpose();
            // T_c A_c = C_c  <=>  A_c^T T_c^T = C_c^T (A_c is symmetric)
            let sol = match at.clone().cholesky() {
                Some(ch) => ch.solve(&c.transpose()),
                None => {
                    warn!("T-matrix M-step: component {k} singular at iteration {it}, adding ridge");
                    trace.regularized += 1;
                    let reg = at + DMatrix::identity(rank, rank) * SINGULAR_RIDGE;
                    reg.lu()
                        .solve(&c.transpose())
                        .ok_or_else(|| Error::Numerical(format!("T-matrix M-step singular for component {k}")))?
                }
            };
            blocks.push(sol.transpose());
        }
        ext = IVectorExtractor::new(ubm.clone(), blocks)?;
    }
    trace.objectives.push(ext.objective(stats)?);
    Ok((ext, trace))
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine score of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn write_extractor<W: Write>(w: &mut W, ext: &IVectorExtractor) -> Result<()> {
    w.write_all(EXTRACTOR_MAGIC)?;
    write_gmm(w, &ext.ubm)?;
    write_u32(w, len_u32(ext.rank, "rank")?)?;
    for b in &ext.t {
        // row-major
        write_f64s(w, b.transpose().as_slice())?;
    }
    Ok(())
}

pub fn read_extractor<R: Read>(reader: R) -> Result<IVectorExtractor> {
    let mut r = LeReader::new(reader, "i-vector extractor");
    r.expect_magic(EXTRACTOR_MAGIC)?;
    let ubm = crate::gmm::io_read_record(&mut r)?;
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 1 << 16 {
        return Err(r.format_error(format!("implausible rank {rank}")));
    }
    let d = ubm.dim();
    let mut blocks = Vec::with_capacity(ubm.num_components());
    for _ in 0..ubm.num_components() {
        let vals = r.f64s(d * rank)?;
        blocks.push(DMatrix::from_row_slice(d, rank, &vals));
    }
    IVectorExtractor::new(ubm, blocks).map_err(|e| r.format_error(e.to_string()))
}

pub fn write_extractor_file(path: &Path, ext: &IVectorExtractor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_extractor(&mut w, ext)?;
    w.flush()?;
    Ok(())
}

pub fn read_extractor_file(path: &Path) -> Result<IVectorExtractor> {
    read_extractor(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub utt_id: String,
    pub values: Vec<f64>,
}

pub fn write_ivector<W: Write>(w: &mut W, v: &IVector) -> Result<()> {
    w.write_all(IVECTOR_MAGIC)?;
    write_str(w, &v.utt_id)?;
    write_u32(w, len_u32(v.values.len(), "rank")?)?;
    write_f64s(w, &v.values)?;
    Ok(())
}

pub fn read_ivectors<R: Read>(reader: R) -> Result<Vec<IVector>> {
    let mut r = LeReader::new(reader, "i-vector");
    let mut out = Vec::new();
    while r.magic_or_eof(IVECTOR_MAGIC)? {
        let utt_id = r.string()?;
        let n = r.u32()? as usize;
        if n == 0 || n > 1 << 20 {
            return Err(r.format_error(format!("implausible rank {n}")));
        }
        let values = r.f64s(n)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.format_error("non-finite i-vector entry"));
        }
        out.push(IVector { utt_id, values });
    }
    Ok(out)
}

pub fn write_ivectors_file(path: &Path, vs: &[IVector]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in vs {
        write_ivector(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ivectors_file(path: &Path) -> Result<Vec<IVector>> {
    read_ivectors(BufReader::new(File::open(path)?))
}
