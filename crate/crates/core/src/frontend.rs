//! Spectrogram front-end: framed STFT magnitude (default) or an HTK Mel
//! projection of it (ablation baseline).
//!
//! Framing never centre-pads: a signal of `N ≥ win_length` samples yields
//! `floor((N − win_length) / hop_length) + 1` frames, and shorter signals are
//! right-padded with zeros to exactly one window.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{PaseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectrogramScale {
    /// `ln(1 + |X|)`
    #[default]
    LogMagnitude,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrontendVariant {
    #[default]
    Stft,
    Mel,
}

impl std::str::FromStr for FrontendVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "stft" => Ok(FrontendVariant::Stft),
            "mel" => Ok(FrontendVariant::Mel),
            other => Err(format!("unknown frontend {other:?} (expected stft or mel)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window_fn: WindowFn,
    pub scale: SpectrogramScale,
    pub variant: FrontendVariant,
    pub n_mels: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            n_fft: 512,
            win_length: 512,
            hop_length: 128,
            window_fn: WindowFn::Hann,
            scale: SpectrogramScale::LogMagnitude,
            variant: FrontendVariant::Stft,
            n_mels: 80,
        }
    }
}

impl FrontendConfig {
    pub fn mel() -> Self {
        Self {
            variant: FrontendVariant::Mel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PaseError::InvalidConfig(format!("frontend: {msg}")));
        if self.sample_rate_hz == 0 || self.n_fft == 0 || self.win_length == 0 || self.hop_length == 0 {
            return bad("sample rate, n_fft, win_length and hop_length must be positive");
        }
        if self.win_length > self.n_fft {
            return bad("win_length must not exceed n_fft");
        }
        if self.hop_length > self.win_length {
            return bad("hop_length must not exceed win_length");
        }
        if self.variant == FrontendVariant::Mel && (self.n_mels == 0 || self.n_mels >= self.n_fft / 2 + 1) {
            return bad("n_mels must be in 1..n_fft/2+1");
        }
        Ok(())
    }

    pub fn stft_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Width of the spectrogram this config produces.
    pub fn feature_dim(&self) -> usize {
        match self.variant {
            FrontendVariant::Stft => self.stft_bins(),
            FrontendVariant::Mel => self.n_mels,
        }
    }

    /// Frames produced for a signal of `len` samples (after short-signal padding).
    pub fn frame_count(&self, len: usize) -> usize {
        let len = len.max(self.win_length);
        (len - self.win_length) / self.hop_length + 1
    }
}

/// `T × F` magnitude (or log-magnitude) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub frame_rate_hz: f64,
    pub variant: FrontendVariant,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Periodic Hann window of length `len`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (n_fft/2 + 1)`, peak-normalised
/// triangles spanning 0 Hz to Nyquist.
pub fn mel_filterbank(config: &FrontendConfig) -> Array2<f64> {
    let bins = config.stft_bins();
    let sr = config.sample_rate_hz as f64;
    let mel_max = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((config.n_mels, bins));
    for m in 0..config.n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sr / config.n_fft as f64;
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            fb[[m, k]] = rising.min(falling).max(0.0);
        }
    }
    fb
}

/// Reusable spectrogram computer: holds the FFT plan, window and filterbank.
pub struct SpectrogramExtractor {
    config: FrontendConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Option<Array2<f64>>,
}

impl std::fmt::Debug for SpectrogramExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrogramExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl SpectrogramExtractor {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        let window = match config.window_fn {
            WindowFn::Hann => hann_window(config.win_length),
        };
        let filterbank = match config.variant {
            FrontendVariant::Mel => Some(mel_filterbank(config)),
            FrontendVariant::Stft => None,
        };
        Ok(Self {
            config: config.clone(),
            fft,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    /// Linear STFT magnitude, `T × (n_fft/2 + 1)`, before any scaling.
    pub fn magnitude<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Err(PaseError::EmptyAudio);
        }
        let mut signal: Vec<f64> = samples.iter().map(|&s| s.into()).collect();
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(PaseError::InvalidSamples);
        }
        let cfg = &self.config;
        if signal.len() < cfg.win_length {
            signal.resize(cfg.win_length, 0.0);
        }
        let frames = cfg.frame_count(signal.len());
        let bins = cfg.stft_bins();
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for t in 0..frames {
            let frame = &signal[t * cfg.hop_length..t * cfg.hop_length + cfg.win_length];
            for (slot, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            for slot in buf[cfg.win_length..].iter_mut() {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, v) in buf[..bins].iter().enumerate() {
                out[[t, k]] = v.norm();
            }
        }
        Ok(out)
    }

    fn scaled(&self, mut values: Array2<f64>, variant: FrontendVariant) -> Spectrogram {
        if self.config.scale == SpectrogramScale::LogMagnitude {
            values.mapv_inplace(f64::ln_1p);
        }
        Spectrogram {
            values,
            frame_rate_hz: self.config.sample_rate_hz as f64 / self.config.hop_length as f64,
            variant,
        }
    }

    pub fn stft<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<Spectrogram> {
        let mag = self.magnitude(samples)?;
        Ok(self.scaled(mag, FrontendVariant::Stft))
    }

    pub fn mel<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<Spectrogram> {
        let mag = self.magnitude(samples)?;
        let projected = match &self.filterbank {
            Some(fb) => mag.dot(&fb.t()),
            None => mag.dot(&mel_filterbank(&self.config).t()),
        };
        Ok(self.scaled(projected, FrontendVariant::Mel))
    }

    /// Spectrogram of the configured variant.
    pub fn compute<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<Spectrogram> {
        match self.config.variant {
            FrontendVariant::Stft => self.stft(samples),
            FrontendVariant::Mel => self.mel(samples),
        }
    }
}

pub fn stft_spectrogram<T: Copy + Into<f64>>(samples: &[T], config: &FrontendConfig) -> Result<Spectrogram> {
    SpectrogramExtractor::new(config)?.stft(samples)
}

pub fn mel_spectrogram<T: Copy + Into<f64>>(samples: &[T], config: &FrontendConfig) -> Result<Spectrogram> {
    let cfg = FrontendConfig {
        variant: FrontendVariant::Mel,
        ..config.clone()
    };
    SpectrogramExtractor::new(&cfg)?.mel(samples)
}

/// Reads 16-bit little-endian mono PCM. Samples are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(PaseError::UnsupportedAudio(format!(
            "{} channels; only mono is accepted",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(PaseError::UnsupportedAudio(format!(
            "{}-bit {:?}; only 16-bit PCM is accepted",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

pub fn quantize_sample(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(quantize_sample(s))?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn magnitude_config() -> FrontendConfig {
        FrontendConfig {
            scale: SpectrogramScale::Magnitude,
            ..FrontendConfig::default()
        }
    }

    #[test]
    fn zero_signal_gives_single_zero_frame() {
        let spec = stft_spectrogram(&vec![0.0f64; 512], &magnitude_config()).unwrap();
        assert_eq!(spec.values.dim(), (1, 257));
        assert!(spec.values.iter().all(|&v| v == 0.0));
        assert_eq!(spec.frame_rate_hz, 125.0);
    }

    #[test]
    fn framing_boundary() {
        let spec = stft_spectrogram(&vec![0.1f64; 640], &FrontendConfig::default()).unwrap();
        assert_eq!(spec.frames(), 2);
        let mel = mel_spectrogram(&vec![0.1f64; 640], &FrontendConfig::default()).unwrap();
        assert_eq!(mel.values.dim(), (2, 80));
    }

    #[test]
    fn short_segments_are_padded_to_one_window() {
        let spec = stft_spectrogram(&[0.5f32; 100], &FrontendConfig::default()).unwrap();
        assert_eq!(spec.frames(), 1);
    }

    #[test]
    fn errors() {
        let empty: [f64; 0] = [];
        assert!(matches!(
            stft_spectrogram(&empty, &FrontendConfig::default()),
            Err(PaseError::EmptyAudio)
        ));
        assert!(matches!(
            stft_spectrogram(&[0.0, f64::NAN, 1.0], &FrontendConfig::default()),
            Err(PaseError::InvalidSamples)
        ));
        let bad = FrontendConfig {
            win_length: 1024,
            ..FrontendConfig::default()
        };
        assert!(matches!(bad.validate(), Err(PaseError::InvalidConfig(_))));
        let bad_hop = FrontendConfig {
            hop_length: 600,
            ..FrontendConfig::default()
        };
        assert!(bad_hop.validate().is_err());
        let bad_mel = FrontendConfig {
            n_mels: 257,
            ..FrontendConfig::mel()
        };
        assert!(bad_mel.validate().is_err());
    }

    #[test]
    fn bin_centre_sinusoid_concentrates_energy() {
        let k = 40usize;
        let f = k as f64 * 16000.0 / 512.0;
        let samples: Vec<f64> = (0..2048)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft_spectrogram(&samples, &magnitude_config()).unwrap();
        for row in spec.values.rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k);
            // Periodic Hann: peak = N/4, neighbours N/8, all else ~0.
            assert!((row[k] - 128.0).abs() < 1e-6);
            assert!((row[k + 1] - 64.0).abs() < 1e-6);
            assert!(row[k + 3] < 1e-6);
        }
    }

    #[test]
    fn log_scale_is_log1p_of_magnitude() {
        let samples: Vec<f64> = (0..900).map(|n| ((n * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let mag = stft_spectrogram(&samples, &magnitude_config()).unwrap();
        let log = stft_spectrogram(&samples, &FrontendConfig::default()).unwrap();
        for (m, l) in mag.values.iter().zip(log.values.iter()) {
            assert!((m.ln_1p() - l).abs() < 1e-12);
        }
    }

    #[test]
    fn filterbank_rows_are_positive() {
        let fb = mel_filterbank(&FrontendConfig::mel());
        assert_eq!(fb.dim(), (80, 257));
        for row in fb.rows() {
            let s: f64 = row.sum();
            assert!(s.is_finite() && s > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn wav_round_trip_and_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..100).map(|i| (i as f32 - 50.0) / 32768.0).collect();
        write_wav(&path, &samples, 16000).unwrap();
        let (back, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 16000);
        assert_eq!(back, samples);

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(PaseError::UnsupportedAudio(_))));
    }
}
