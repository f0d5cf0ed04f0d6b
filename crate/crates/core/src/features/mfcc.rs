use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, PcmUtterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    /// Static cepstra per frame, C0 included.
    pub num_static: usize,
    pub mel_filters: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub low_freq_hz: f64,
    /// Upper filterbank edge; `<= 0` means Nyquist.
    pub high_freq_hz: f64,
    pub log_floor: f64,
    pub use_deltas: bool,
    /// Frames more than this many dB below the loudest frame are dropped.
    pub vad_offset_db: f64,
    /// Absolute frame energy floor in dB (sum of squared samples).
    pub vad_floor_db: f64,
    pub apply_cmn: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
            num_static: 20,
            mel_filters: 30,
            fft_size: 512,
            preemphasis: 0.97,
            low_freq_hz: 20.0,
            high_freq_hz: 0.0,
            log_floor: 1e-10,
            use_deltas: true,
            vad_offset_db: 30.0,
            vad_floor_db: -60.0,
            apply_cmn: false,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_len_ms > 0.0 && self.frame_shift_ms > 0.0) {
            return Err(Error::InvalidArgument("frame length and shift must be > 0".into()));
        }
        if self.frame_len_ms < self.frame_shift_ms {
            return Err(Error::InvalidArgument("frame length must be >= frame shift".into()));
        }
        if self.num_static == 0 || self.mel_filters == 0 {
            return Err(Error::InvalidArgument("num_static and mel_filters must be >= 1".into()));
        }
        if self.num_static > self.mel_filters {
            return Err(Error::InvalidArgument(format!(
                "num_static {} exceeds mel_filters {}",
                self.num_static, self.mel_filters
            )));
        }
        Ok(())
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    fn fft_len(&self, frame: usize) -> usize {
        self.fft_size.max(frame).next_power_of_two()
    }
}

/// `floor((len - frame) / shift) + 1`, or 0 when the signal is shorter than a frame.
pub fn frame_count(len: usize, frame: usize, shift: usize) -> usize {
    if len < frame || shift == 0 {
        0
    } else {
        (len - frame) / shift + 1
    }
}

pub(crate) fn check_frames(pcm: &PcmUtterance, cfg: &MfccConfig) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    let frame = cfg.frame_samples(pcm.sample_rate);
    let shift = cfg.shift_samples(pcm.sample_rate);
    if frame == 0 || shift == 0 {
        return Err(Error::InvalidArgument("frame or shift rounds to zero samples".into()));
    }
    let t = frame_count(pcm.samples.len(), frame, shift);
    if t == 0 {
        return Err(Error::TooShort { utt_id: pcm.utt_id.clone(), samples: pcm.samples.len(), needed: frame });
    }
    Ok((frame, shift, t))
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters equally spaced on the mel scale over power-spectrum bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and the weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_len: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let high = if high_hz <= 0.0 { nyquist } else { high_hz.min(nyquist) };
        let mel_lo = hz_to_mel(low_hz);
        let mel_hi = hz_to_mel(high);
        let step = (mel_hi - mel_lo) / (num_filters + 1) as f64;
        let bins = fft_len / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_len as f64;
        let filters = (0..num_filters)
            .map(|m| {
                let left = mel_lo + m as f64 * step;
                let center = left + step;
                let right = center + step;
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..bins {
                    let mel = hz_to_mel(k as f64 * bin_hz);
                    let w = if mel > left && mel <= center {
                        (mel - left) / (center - left)
                    } else if mel > center && mel < right {
                        (right - mel) / (right - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                    }
                    if first.is_some() {
                        weights.push(w);
                    }
                }
                while weights.last() == Some(&0.0) {
                    weights.pop();
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self { filters }
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights.iter().zip(&power[*start..]).map(|(w, p)| w * p).sum();
        }
    }
}

/// Per-utterance working state so FFT plans and tables are built once.
pub(crate) struct FrameAnalyzer {
    frame: usize,
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
    num_static: usize,
    preemphasis: f64,
    log_floor: f64,
}

impl FrameAnalyzer {
    pub(crate) fn new(cfg: &MfccConfig, sample_rate: u32, frame: usize) -> Self {
        let fft_len = cfg.fft_len(frame);
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        let window = if frame == 1 {
            vec![1.0]
        } else {
            (0..frame).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()).collect()
        };
        let filterbank = MelFilterbank::new(cfg.mel_filters, fft_len, sample_rate, cfg.low_freq_hz, cfg.high_freq_hz);
        let m = cfg.mel_filters;
        let mut dct = Vec::with_capacity(cfg.num_static * m);
        for k in 0..cfg.num_static {
            let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for j in 0..m {
                dct.push(scale * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos());
            }
        }
        Self {
            frame,
            fft,
            fft_len,
            window,
            filterbank,
            dct,
            num_static: cfg.num_static,
            preemphasis: cfg.preemphasis,
            log_floor: cfg.log_floor,
        }
    }

    /// Mel filterbank energies of one frame of raw samples.
    pub(crate) fn mel_energies(&self, samples: &[f64], buf: &mut [Complex<f64>], out: &mut [f64]) {
        debug_assert_eq!(samples.len(), self.frame);
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for n in 0..self.frame {
            let prev = if n == 0 { samples[0] } else { samples[n - 1] };
            let v = samples[n] - self.preemphasis * prev;
            buf[n] = Complex::new(v * self.window[n], 0.0);
        }
        self.fft.process(buf);
        let power: Vec<f64> = buf[..self.fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        self.filterbank.apply(&power, out);
    }

    pub(crate) fn cepstra(&self, mel: &[f64], out: &mut [f64]) {
        let m = mel.len();
        let logs: Vec<f64> = mel.iter().map(|e| e.max(self.log_floor).ln()).collect();
        for (o, row) in out.iter_mut().zip(self.dct.chunks_exact(m)).take(self.num_static) {
            *o = row.iter().zip(&logs).map(|(c, l)| c * l).sum();
        }
    }
}

/// Static MFCCs, one row per frame, `num_static` columns.
pub fn compute_mfcc(pcm: &PcmUtterance, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let (frame, shift, t) = check_frames(pcm, cfg)?;
    let analyzer = FrameAnalyzer::new(cfg, pcm.sample_rate, frame);
    let mut buf = vec![Complex::new(0.0, 0.0); analyzer.fft_len];
    let mut mel = vec![0.0; cfg.mel_filters];
    let mut data = vec![0.0; t * cfg.num_static];
    for (i, row) in data.chunks_exact_mut(cfg.num_static).enumerate() {
        let start = i * shift;
        analyzer.mel_energies(&pcm.samples[start..start + frame], &mut buf, &mut mel);
        analyzer.cepstra(&mel, row);
    }
    FeatureMatrix::new(pcm.utt_id.clone(), cfg.num_static, data)
}
