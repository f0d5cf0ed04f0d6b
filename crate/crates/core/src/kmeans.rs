//! Seeded Lloyd k-means with k-means++ initialization.
//!
//! Shared by GMM initialization and speech-unit clustering. Nearest-centroid
//! ties go to the lowest centroid index; an emptied cluster is re-seeded with
//! the point farthest from its current centroid, taken from a cluster that
//! still has at least two members.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k * dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points.chunks_exact(dim).map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (p, d) in points.chunks_exact(dim).zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Clusters `points` (row-major, `dim` wide) into `k` groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument("k-means points do not match dimension".into()));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} points cannot form {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, dim, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (j, _) = nearest(p, &centroids, dim);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        reseed_empty(points, dim, k, &centroids, &mut assignments);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            for d in 0..dim {
                centroids[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
            }
        }
        let obj: f64 = points
            .chunks_exact(dim)
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a * dim..(a + 1) * dim]))
            .sum();
        trace.push(obj);
        if !changed {
            converged = true;
            break;
        }
    }

    Ok(KMeansResult { centroids, assignments, objective_trace: trace, converged })
}

fn reseed_empty(points: &[f64], dim: usize, k: usize, centroids: &[f64], assignments: &mut [usize]) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a * dim..(a + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => {
                log::debug!("k-means: re-seeding empty cluster {empty} with point {i}");
                assignments[i] = empty;
            }
            None => return,
        }
    }
}
