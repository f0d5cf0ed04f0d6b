//! Front end: PCM audio to voiced MFCC+Δ+ΔΔ frames.
//!
//! The pipeline is pre-emphasis, Hamming window, power spectrum, mel
//! filterbank, log, DCT-II, then regression deltas and an energy VAD. All
//! functions are pure and can be run over utterances in parallel.

mod audio;
mod deltas;
mod featio;
mod matrix;
mod mfcc;
mod vad;

pub use audio::{read_raw_pcm16, read_wav, PcmUtterance};
pub use deltas::append_deltas;
pub use featio::{read_feat_archive, read_feat_file, write_feat, write_feat_archive, FEAT_MAGIC};
pub use matrix::FeatureMatrix;
pub use mfcc::{compute_mfcc, frame_count, MelFilterbank, MfccConfig};
pub use vad::{energy_vad, frame_log_energies};

use crate::error::{Error, Result};

/// Full front end: static MFCCs, optional deltas, energy VAD and optional
/// cepstral mean normalization over the voiced frames.
pub fn extract_features(pcm: &PcmUtterance, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let statics = compute_mfcc(pcm, cfg)?;
    let feats = if cfg.use_deltas { append_deltas(&statics) } else { statics };
    let mask = energy_vad(pcm, cfg)?;
    let mut voiced = feats.select_rows(&mask);
    if voiced.num_frames() == 0 {
        return Err(Error::EmptyAfterVad(pcm.utt_id.clone()));
    }
    if cfg.apply_cmn {
        voiced.subtract_mean();
    }
    Ok(voiced)
}
