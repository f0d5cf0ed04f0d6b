use super::DiagGmm;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub gmm: DiagGmm,
    pub ubm_id: String,
}

impl SpeakerModel {
    /// Checks that the model was adapted from a UBM of the same shape.
    pub fn check_against(&self, ubm: &DiagGmm) -> Result<()> {
        if self.gmm.num_components() != ubm.num_components() {
            return Err(Error::DimensionMismatch { expected: ubm.num_components(), actual: self.gmm.num_components() });
        }
        if self.gmm.dim() != ubm.dim() {
            return Err(Error::DimensionMismatch { expected: ubm.dim(), actual: self.gmm.dim() });
        }
        Ok(())
    }
}

/// Mean-only MAP adaptation over an arbitrary sequence of frames.
///
/// `mu'_c = (sum_t g_t(c) x_t + r mu_c) / (n_c + r)`; weights and variances
/// are copied from the UBM.
pub fn map_adapt_rows<'a, I>(ubm: &DiagGmm, rows: I, relevance: f64) -> Result<DiagGmm>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if !(relevance > 0.0) {
        return Err(Error::InvalidArgument(format!("relevance factor must be > 0, got {relevance}")));
    }
    let c = ubm.num_components();
    let d = ubm.dim();
    let mut occ = vec![0.0; c];
    let mut sx = vec![0.0; c * d];
    let mut post = vec![0.0; c];
    let mut frames = 0usize;
    for x in rows {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
        }
        frames += 1;
        ubm.posteriors_into(x, &mut post);
        for k in 0..c {
            let g = post[k];
            occ[k] += g;
            for i in 0..d {
                sx[k * d + i] += g * x[i];
            }
        }
    }
    if frames == 0 {
        return Ok(ubm.clone());
    }
    let mut means = ubm.means().to_vec();
    for k in 0..c {
        if occ[k] == 0.0 {
            continue;
        }
        for i in 0..d {
            means[k * d + i] = (sx[k * d + i] + relevance * ubm.mean(k)[i]) / (occ[k] + relevance);
        }
    }
    ubm.with_means(means)
}

pub fn map_adapt(
    ubm: &DiagGmm,
    ubm_id: &str,
    speaker_id: &str,
    features: &FeatureMatrix,
    relevance: f64,
) -> Result<SpeakerModel> {
    if features.is_empty() {
        log::warn!("speaker '{speaker_id}': no enrollment frames, model equals the UBM");
    }
    let gmm = map_adapt_rows(ubm, features.rows(), relevance)?;
    Ok(SpeakerModel { speaker_id: speaker_id.to_string(), gmm, ubm_id: ubm_id.to_string() })
}

/// Frame-averaged log-likelihood ratio of speaker model against UBM.
pub fn gmm_ubm_score(spk: &DiagGmm, ubm: &DiagGmm, test: &FeatureMatrix) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty(format!("test utterance '{}' has no frames", test.utt_id())));
    }
    if spk.dim() != test.dim() || ubm.dim() != test.dim() {
        return Err(Error::DimensionMismatch { expected: ubm.dim(), actual: test.dim() });
    }
    let mut s1 = vec![0.0; spk.num_components()];
    let mut s2 = vec![0.0; ubm.num_components()];
    let total: f64 = test.rows().map(|x| spk.frame_ll_with(x, &mut s1) - ubm.frame_ll_with(x, &mut s2)).sum();
    Ok(total / test.num_frames() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_comp() -> DiagGmm {
        DiagGmm::new(vec![0.5, 0.5], vec![-3.0, 3.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn scalar_map_arithmetic() {
        let ubm = DiagGmm::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let f = FeatureMatrix::from_rows("e", &[vec![2.0]]).unwrap();
        let m = map_adapt(&ubm, "ubm", "s", &f, 16.0).unwrap();
        assert!((m.gmm.mean(0)[0] - 2.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn unvisited_component_keeps_ubm_mean() {
        // far-away component gets posterior that underflows to exactly 0
        let ubm = DiagGmm::new(vec![0.5, 0.5], vec![0.0, 1e4], vec![1.0, 1.0]).unwrap();
        let f = FeatureMatrix::from_rows("e", &[vec![0.5], vec![-0.2]]).unwrap();
        let m = map_adapt(&ubm, "u", "s", &f, 16.0).unwrap();
        assert_eq!(m.gmm.mean(1), ubm.mean(1));
        assert_eq!(m.gmm.weights(), ubm.weights());
        assert_eq!(m.gmm.vars(), ubm.vars());
    }

    #[test]
    fn relevance_limits() {
        let ubm = DiagGmm::new(vec![0.5, 0.5], vec![0.0, 1e4], vec![1.0, 1.0]).unwrap();
        let f = FeatureMatrix::from_rows("e", &[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        let big = map_adapt(&ubm, "u", "s", &f, 1e15).unwrap();
        assert!((big.gmm.mean(0)[0]).abs() < 1e-12);
        let tiny = map_adapt(&ubm, "u", "s", &f, 1e-8).unwrap();
        assert!((tiny.gmm.mean(0)[0] - 7.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn empty_enrollment_returns_ubm() {
        let ubm = two_comp();
        let f = FeatureMatrix::empty("e", 1);
        assert_eq!(map_adapt(&ubm, "u", "s", &f, 16.0).unwrap().gmm, ubm);
        assert!(map_adapt(&ubm, "u", "s", &f, 0.0).is_err());
    }

    #[test]
    fn score_identities() {
        let ubm = two_comp();
        let t = FeatureMatrix::from_rows("t", &[vec![0.4], vec![2.2], vec![-1.0]]).unwrap();
        assert_eq!(gmm_ubm_score(&ubm, &ubm, &t).unwrap(), 0.0);

        let spk = ubm.with_means(vec![-2.5, 3.5]).unwrap();
        let one = t.slice(0, 1);
        let direct = spk.log_likelihood(&[0.4]).unwrap() - ubm.log_likelihood(&[0.4]).unwrap();
        assert!((gmm_ubm_score(&spk, &ubm, &one).unwrap() - direct).abs() < 1e-14);
        let fwd = gmm_ubm_score(&spk, &ubm, &t).unwrap();
        let rev = gmm_ubm_score(&ubm, &spk, &t).unwrap();
        assert!((fwd + rev).abs() < 1e-14);
        assert!(gmm_ubm_score(&spk, &ubm, &FeatureMatrix::empty("x", 1)).is_err());
    }
}
