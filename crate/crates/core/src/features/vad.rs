use super::mfcc::check_frames;
use super::{MfccConfig, PcmUtterance};
use crate::error::{Error, Result};

/// Frame energies in dB, computed on the raw (un-emphasized) samples.
pub fn frame_log_energies(pcm: &PcmUtterance, cfg: &MfccConfig) -> Result<Vec<f64>> {
    let (frame, shift, t) = check_frames(pcm, cfg)?;
    Ok((0..t)
        .map(|i| {
            let e: f64 = pcm.samples[i * shift..i * shift + frame].iter().map(|s| s * s).sum();
            10.0 * e.max(1e-30).log10()
        })
        .collect())
}

/// Keeps frames within `vad_offset_db` of the loudest frame and above the
/// absolute floor.
pub fn energy_vad(pcm: &PcmUtterance, cfg: &MfccConfig) -> Result<Vec<bool>> {
    let energies = frame_log_energies(pcm, cfg)?;
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - cfg.vad_offset_db;
    let mask: Vec<bool> = energies.iter().map(|&e| e > threshold && e > cfg.vad_floor_db).collect();
    if !mask.iter().any(|&k| k) {
        return Err(Error::EmptyAfterVad(pcm.utt_id.clone()));
    }
    Ok(mask)
}
