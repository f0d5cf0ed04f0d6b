//! Trials, linear score fusion, the alpha sweep, EER and DET curves.
//!
//! A trial is accepted when its score is `>=` the threshold; systems whose
//! scores run the other way must be negated first.

mod trials;

pub use trials::{split_scores, ScoreSet, Trial, TrialSet};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.far, p.frr);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// FAR/FRR at every distinct score, ascending, followed by the `+inf`
/// sentinel where everything is rejected.
fn operating_points(tar: &[f64], non: &[f64]) -> Result<Vec<DetPoint>> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need target and non-target trials (have {} and {})",
            tar.len(),
            non.len()
        )));
    }
    let mut tar = tar.to_vec();
    let mut non = non.to_vec();
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    // i: targets below threshold, j: non-targets below threshold
    let (mut i, mut j) = (0, 0);
    for &t in &thresholds {
        while i < tar.len() && tar[i] < t {
            i += 1;
        }
        while j < non.len() && non[j] < t {
            j += 1;
        }
        points.push(DetPoint { threshold: t, far: (non.len() - j) as f64 / nn, frr: i as f64 / nt });
    }
    points.push(DetPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 });
    Ok(points)
}

/// Index of the first point with `FAR - FRR <= 0`; it always exists because
/// the sentinel has `FAR - FRR = -1`.
fn crossing(points: &[DetPoint]) -> usize {
    points.iter().position(|p| p.far - p.frr <= 0.0).expect("sentinel point crosses")
}

pub fn eer_from_scores(tar: &[f64], non: &[f64]) -> Result<EerResult> {
    let pts = operating_points(tar, non)?;
    let i = crossing(&pts);
    let p = pts[i];
    let d = p.far - p.frr;
    if d == 0.0 {
        return Ok(EerResult { eer: p.far, threshold: p.threshold });
    }
    // i > 0: the first point has FRR = 0 and FAR = 1
    let q = pts[i - 1];
    let dq = q.far - q.frr;
    let lambda = dq / (dq - d);
    let eer = q.far + lambda * (p.far - q.far);
    let threshold =
        if p.threshold.is_finite() { q.threshold + lambda * (p.threshold - q.threshold) } else { q.threshold };
    Ok(EerResult { eer, threshold })
}

pub fn compute_eer(trials: &TrialSet, scores: &ScoreSet) -> Result<EerResult> {
    let (tar, non) = split_scores(trials, scores)?;
    eer_from_scores(&tar, &non)
}

/// The FAR/FRR staircase at distinct thresholds, thinned to about
/// `num_points` evenly spaced entries. The EER-crossing point is always kept.
pub fn det_curve(trials: &TrialSet, scores: &ScoreSet, num_points: usize) -> Result<DetCurve> {
    let (tar, non) = split_scores(trials, scores)?;
    det_from_scores(&tar, &non, num_points)
}

/// Operating points at distinct thresholds, evenly downsampled to
/// `num_points`. The point nearest the EER crossing is always kept, so up to
/// `num_points + 1` points come back.
pub fn det_from_scores(tar: &[f64], non: &[f64], num_points: usize) -> Result<DetCurve> {
    if num_points < 2 {
        return Err(Error::InvalidArgument("a DET curve needs at least 2 points".into()));
    }
    let mut pts = operating_points(tar, non)?;
    let cross = crossing(&pts);
    pts.pop();
    let m = pts.len();
    if m <= num_points {
        return Ok(DetCurve { points: pts });
    }
    let mut keep: Vec<usize> =
        (0..num_points).map(|k| ((k as f64) * (m - 1) as f64 / (num_points - 1) as f64).round() as usize).collect();
    if cross < m {
        keep.push(cross);
    }
    keep.sort_unstable();
    keep.dedup();
    Ok(DetCurve { points: keep.into_iter().map(|k| pts[k]).collect() })
}

fn z_normalized(s: &ScoreSet) -> ScoreSet {
    let n = s.len() as f64;
    let mean = s.iter().map(|x| x.2).sum::<f64>() / n;
    let var = s.iter().map(|x| (x.2 - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    s.map(s.system_id.clone(), |v| (v - mean) / sd)
}

/// `alpha * a + (1 - alpha) * b`, optionally z-normalizing each pool first.
pub fn fuse_scores(a: &ScoreSet, b: &ScoreSet, alpha: f64, normalize: bool) -> Result<ScoreSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if !a.same_keys(b) {
        return Err(Error::InvalidArgument(format!(
            "score sets '{}' and '{}' cover different trials",
            a.system_id, b.system_id
        )));
    }
    let (za, zb);
    let (a, b) = if normalize {
        za = z_normalized(a);
        zb = z_normalized(b);
        (&za, &zb)
    } else {
        (a, b)
    };
    let mut out = ScoreSet::new(format!("fused({},{},{alpha})", a.system_id, b.system_id));
    for ((m, u, x), (_, _, y)) in a.iter().zip(b.iter()) {
        // endpoints are exact copies rather than x*1 + y*0
        let v = if alpha == 1.0 {
            x
        } else if alpha == 0.0 {
            y
        } else {
            alpha * x + (1.0 - alpha) * y
        };
        out.insert(m, u, v)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweep {
    /// `(alpha, eer)` in ascending alpha.
    pub points: Vec<(f64, f64)>,
    pub best_alpha: f64,
    pub best_eer: f64,
}

/// Alpha grid `{0, step, 2 step, ..., 1}`; 1 is always included.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if ((n * step) - 1.0).abs() < 1e-9 {
        let n = n as usize;
        return Ok((0..=n).map(|i| i as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|a| *a < 1.0).collect();
    grid.push(1.0);
    Ok(grid)
}

/// EER of the fused system over the alpha grid. Ties go to the larger alpha.
pub fn sweep_alpha(
    a: &ScoreSet,
    b: &ScoreSet,
    trials: &TrialSet,
    grid_step: f64,
    normalize: bool,
) -> Result<AlphaSweep> {
    let mut points = Vec::new();
    for alpha in alpha_grid(grid_step)? {
        let fused = fuse_scores(a, b, alpha, normalize)?;
        points.push((alpha, compute_eer(trials, &fused)?.eer));
    }
    let (mut best_alpha, mut best_eer) = points[0];
    for &(al, e) in &points[1..] {
        if e <= best_eer {
            best_alpha = al;
            best_eer = e;
        }
    }
    Ok(AlphaSweep { points, best_alpha, best_eer })
}
