use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiagGmm;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kmeans::kmeans;

/// Utterances per accumulation chunk. Chunks are reduced in order, so the
/// result does not depend on the worker count.
const UTTS_PER_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub num_iters: usize,
    pub seed: u64,
    pub variance_floor_fraction: f64,
    /// Occupancy (soft frame count) below which a component is re-seeded.
    pub min_component_occupancy: f64,
    pub kmeans_iters: usize,
    /// Upper bound on frames fed to the k-means initializer.
    pub init_max_frames: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            num_iters: 10,
            seed: 0,
            variance_floor_fraction: 1e-3,
            min_component_occupancy: 1.0,
            kmeans_iters: 10,
            init_max_frames: 20_000,
        }
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, Default)]
pub struct EmTrace {
    /// Total data log-likelihood under the parameters entering each
    /// iteration, followed by the value for the returned model.
    pub log_likelihoods: Vec<f64>,
    /// Iterations whose M-step re-seeded at least one starved component.
    pub reseeded_iterations: Vec<usize>,
}

struct Acc {
    ll: f64,
    occ: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
}

impl Acc {
    fn new(c: usize, d: usize) -> Self {
        Self { ll: 0.0, occ: vec![0.0; c], sx: vec![0.0; c * d], sxx: vec![0.0; c * d] }
    }

    fn add(&mut self, other: &Acc) {
        self.ll += other.ll;
        for (a, b) in self.occ.iter_mut().zip(&other.occ) {
            *a += b;
        }
        for (a, b) in self.sx.iter_mut().zip(&other.sx) {
            *a += b;
        }
        for (a, b) in self.sxx.iter_mut().zip(&other.sxx) {
            *a += b;
        }
    }
}

fn accumulate(gmm: &DiagGmm, utts: &[FeatureMatrix]) -> Acc {
    let c = gmm.num_components();
    let d = gmm.dim();
    let partials: Vec<Acc> = utts
        .par_chunks(UTTS_PER_CHUNK)
        .map(|chunk| {
            let mut acc = Acc::new(c, d);
            let mut post = vec![0.0; c];
            for u in chunk {
                for x in u.rows() {
                    acc.ll += gmm.posteriors_into(x, &mut post);
                    for (k, &g) in post.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        acc.occ[k] += g;
                        let sx = &mut acc.sx[k * d..(k + 1) * d];
                        let sxx = &mut acc.sxx[k * d..(k + 1) * d];
                        for i in 0..d {
                            sx[i] += g * x[i];
                            sxx[i] += g * x[i] * x[i];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Acc::new(c, d);
    for p in &partials {
        total.add(p);
    }
    total
}

fn global_variance(utts: &[FeatureMatrix], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut s = vec![0.0; d];
    let mut ss = vec![0.0; d];
    for u in utts {
        for x in u.rows() {
            n += 1.0;
            for i in 0..d {
                s[i] += x[i];
                ss[i] += x[i] * x[i];
            }
        }
    }
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let var = (0..d).map(|i| (ss[i] / n - mean[i] * mean[i]).max(0.0)).collect();
    (mean, var)
}

/// Trains a `C`-component diagonal GMM by EM, initialized with seeded k-means.
pub fn train_ubm_em(utts: &[FeatureMatrix], num_components: usize, cfg: &EmConfig) -> Result<(DiagGmm, EmTrace)> {
    if cfg.num_iters == 0 {
        return Err(Error::InvalidArgument("EM needs num_iters >= 1".into()));
    }
    if num_components == 0 {
        return Err(Error::InvalidArgument("EM needs at least one component".into()));
    }
    let d = match utts.iter().find(|u| !u.is_empty()) {
        Some(u) => u.dim(),
        None => return Err(Error::Empty("no training frames".into())),
    };
    if let Some(bad) = utts.iter().find(|u| u.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: bad.dim() });
    }
    let total_frames: usize = utts.iter().map(|u| u.num_frames()).sum();
    if total_frames < num_components {
        return Err(Error::InvalidArgument(format!("{total_frames} frames cannot train {num_components} components")));
    }

    let (global_mean, global_var) = global_variance(utts, d);
    let floor: Vec<f64> = global_var.iter().map(|v| (v * cfg.variance_floor_fraction).max(1e-12)).collect();

    let mut gmm = initialize(utts, total_frames, num_components, d, &global_var, &global_mean, &floor, cfg)?;
    let mut trace = EmTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e11a);

    for iter in 0..cfg.num_iters {
        let acc = accumulate(&gmm, utts);
        trace.log_likelihoods.push(acc.ll);
        let (next, reseeded) = m_step(&acc, d, &floor, cfg.min_component_occupancy, &mut rng)?;
        if reseeded {
            trace.reseeded_iterations.push(iter);
        }
        gmm = next;
    }
    let final_ll = accumulate(&gmm, utts).ll;
    trace.log_likelihoods.push(final_ll);
    if !final_ll.is_finite() {
        return Err(Error::Numerical("EM produced a non-finite log-likelihood".into()));
    }
    Ok((gmm, trace))
}

#[allow(clippy::too_many_arguments)]
fn initialize(
    utts: &[FeatureMatrix],
    total_frames: usize,
    c: usize,
    d: usize,
    global_var: &[f64],
    global_mean: &[f64],
    floor: &[f64],
    cfg: &EmConfig,
) -> Result<DiagGmm> {
    if c == 1 {
        let vars = global_var.iter().zip(floor).map(|(v, f)| v.max(*f)).collect();
        return DiagGmm::new(vec![1.0], global_mean.to_vec(), vars);
    }
    // every stride-th frame by global index
    let stride = total_frames.div_ceil(cfg.init_max_frames.max(c)).max(1);
    let mut sample = Vec::with_capacity((total_frames / stride + 1) * d);
    let mut idx = 0usize;
    for u in utts {
        for x in u.rows() {
            if idx.is_multiple_of(stride) {
                sample.extend_from_slice(x);
            }
            idx += 1;
        }
    }
    let km = kmeans(&sample, d, c, cfg.kmeans_iters, cfg.seed)?;
    let n = sample.len() / d;
    let mut counts = vec![0.0; c];
    let mut sxx = vec![0.0; c * d];
    for (x, &a) in sample.chunks_exact(d).zip(&km.assignments) {
        counts[a] += 1.0;
        for i in 0..d {
            let diff = x[i] - km.centroids[a * d + i];
            sxx[a * d + i] += diff * diff;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|k| k / n as f64).collect();
    let sum: f64 = weights.iter().sum();
    let weights = weights.into_iter().map(|w| w / sum).collect();
    let mut vars = vec![0.0; c * d];
    for k in 0..c {
        for i in 0..d {
            let v = if counts[k] > 1.0 { sxx[k * d + i] / counts[k] } else { global_var[i] };
            vars[k * d + i] = v.max(floor[i]);
        }
    }
    DiagGmm::new(weights, km.centroids, vars)
}

fn m_step(acc: &Acc, d: usize, floor: &[f64], min_occ: f64, rng: &mut ChaCha8Rng) -> Result<(DiagGmm, bool)> {
    let c = acc.occ.len();
    let total: f64 = acc.occ.iter().sum();
    let mut weights = vec![0.0; c];
    let mut means = vec![0.0; c * d];
    let mut vars = vec![0.0; c * d];
    let mut starved = Vec::new();
    for k in 0..c {
        let n = acc.occ[k];
        if n < min_occ.max(f64::MIN_POSITIVE) {
            starved.push(k);
            continue;
        }
        weights[k] = n / total;
        for i in 0..d {
            let m = acc.sx[k * d + i] / n;
            means[k * d + i] = m;
            vars[k * d + i] = (acc.sxx[k * d + i] / n - m * m).max(floor[i]);
        }
    }
    if starved.len() == c {
        return Err(Error::Numerical("every GMM component lost its occupancy".into()));
    }
    for &k in &starved {
        // split the heaviest component in two along its standard deviations
        let h =
            (0..c).max_by(|a, b| weights[*a].total_cmp(&weights[*b]).then(b.cmp(a))).expect("at least one component");
        log::warn!("EM: component {k} starved (occupancy {:.3}); re-seeding from component {h}", acc.occ[k]);
        weights[h] /= 2.0;
        weights[k] = weights[h];
        for i in 0..d {
            let sd = vars[h * d + i].sqrt();
            let eps = 0.2 * sd * if rng.random::<bool>() { 1.0 } else { -1.0 };
            means[k * d + i] = means[h * d + i] + eps;
            means[h * d + i] -= eps;
            vars[k * d + i] = vars[h * d + i];
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok((DiagGmm::new(weights, means, vars)?, !starved.is_empty()))
}
