use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM samples scaled to [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PcmUtterance {
    pub utt_id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl PcmUtterance {
    pub fn new(utt_id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("PCM samples must be finite".into()));
        }
        Ok(Self { utt_id: utt_id.into(), samples, sample_rate })
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "utt".to_string())
}

/// Reads a 16-bit mono WAV file; the utterance id is the file stem.
pub fn read_wav(path: &Path) -> Result<PcmUtterance> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::format("WAV", other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format("WAV", format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format("WAV", "expected 16-bit integer PCM"));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format("WAV", e.to_string()))?;
    PcmUtterance::new(stem(path), samples, spec.sample_rate)
}

/// Reads headerless little-endian PCM16 at a declared rate.
pub fn read_raw_pcm16(path: &Path, sample_rate: u32) -> Result<PcmUtterance> {
    let bytes = fs::read(path)?;
    if bytes.len() % 2 != 0 {
        return Err(Error::format("raw PCM16", "odd byte count"));
    }
    let samples = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0).collect();
    PcmUtterance::new(stem(path), samples, sample_rate)
}
