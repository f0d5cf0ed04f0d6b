//! Diagonal-covariance Gaussian mixtures: likelihoods, EM training of the
//! UBM, mean-only MAP adaptation and the frame-averaged LLR score.

mod em;
mod io;
mod map;

pub use em::{train_ubm_em, EmConfig, EmTrace};
pub(crate) use io::read_gmm_record as io_read_record;
pub use io::{
    read_gmm, read_gmm_file, read_speaker_models, read_speaker_models_file, write_gmm, write_gmm_file,
    write_speaker_model, write_speaker_models_file, GMM_MAGIC,
};
pub use map::{gmm_ubm_score, map_adapt, map_adapt_rows, SpeakerModel};

use std::f64::consts::PI;

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
    // ln w_c - 0.5 * sum_d ln(2 pi var_cd)
    log_consts: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl DiagGmm {
    /// `means` and `vars` are `C x D` row-major.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        let c = weights.len();
        if c == 0 {
            return Err(Error::InvalidArgument("GMM needs at least one component".into()));
        }
        if means.is_empty() || !means.len().is_multiple_of(c) || vars.len() != means.len() {
            return Err(Error::InvalidArgument(format!(
                "GMM shapes disagree: {c} weights, {} means, {} vars",
                means.len(),
                vars.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("GMM weights must form a simplex (sum {sum})")));
        }
        if vars.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("GMM variances must be positive and finite".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("GMM means must be finite".into()));
        }
        let dim = means.len() / c;
        let inv_vars: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
        let log_consts = (0..c)
            .map(|k| {
                let lv: f64 = vars[k * dim..(k + 1) * dim].iter().map(|v| (2.0 * PI * v).ln()).sum();
                weights[k].ln() - 0.5 * lv
            })
            .collect();
        Ok(Self { dim, weights, means, vars, log_consts, inv_vars })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn var(&self, c: usize) -> &[f64] {
        &self.vars[c * self.dim..(c + 1) * self.dim]
    }

    /// Same weights and variances, new means.
    pub fn with_means(&self, means: Vec<f64>) -> Result<Self> {
        if means.len() != self.means.len() {
            return Err(Error::DimensionMismatch { expected: self.means.len(), actual: means.len() });
        }
        Self::new(self.weights.clone(), means, self.vars.clone())
    }

    fn check_dim(&self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: frame.len() });
        }
        Ok(())
    }

    /// `ln(w_c N(x; mu_c, var_c))` for every component.
    pub(crate) fn weighted_log_densities(&self, frame: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (c, o) in out.iter_mut().enumerate() {
            let mu = &self.means[c * d..(c + 1) * d];
            let iv = &self.inv_vars[c * d..(c + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let diff = frame[i] - mu[i];
                q += diff * diff * iv[i];
            }
            *o = self.log_consts[c] - 0.5 * q;
        }
    }

    /// Log-likelihood of one frame; `scratch` must hold `C` entries.
    pub(crate) fn frame_ll_with(&self, frame: &[f64], scratch: &mut [f64]) -> f64 {
        self.weighted_log_densities(frame, scratch);
        log_sum_exp(scratch)
    }

    pub fn log_likelihood(&self, frame: &[f64]) -> Result<f64> {
        self.check_dim(frame)?;
        let mut scratch = vec![0.0; self.num_components()];
        Ok(self.frame_ll_with(frame, &mut scratch))
    }

    /// Component posteriors of one frame.
    pub fn frame_posteriors(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(frame)?;
        let mut post = vec![0.0; self.num_components()];
        self.posteriors_into(frame, &mut post);
        Ok(post)
    }

    /// Writes posteriors into `out` and returns the frame log-likelihood.
    pub(crate) fn posteriors_into(&self, frame: &[f64], out: &mut [f64]) -> f64 {
        self.weighted_log_densities(frame, out);
        let ll = log_sum_exp(out);
        normalize_log_in_place(out, ll);
        ll
    }

    /// Total log-likelihood of all rows.
    pub fn total_log_likelihood(&self, rows: &[f64]) -> Result<f64> {
        if !rows.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: rows.len() % self.dim });
        }
        let mut scratch = vec![0.0; self.num_components()];
        Ok(rows.chunks_exact(self.dim).map(|r| self.frame_ll_with(r, &mut scratch)).sum())
    }
}

/// `gmm_log_likelihood` under its operation name.
pub fn gmm_log_likelihood(gmm: &DiagGmm, frame: &[f64]) -> Result<f64> {
    gmm.log_likelihood(frame)
}

pub fn frame_posteriors(gmm: &DiagGmm, frame: &[f64]) -> Result<Vec<f64>> {
    gmm.frame_posteriors(frame)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn normalize_log_in_place(xs: &mut [f64], lse: f64) {
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
        sum += *x;
    }
    // exp rounding leaves the sum a few ulps off
    for x in xs.iter_mut() {
        *x /= sum;
    }
}
