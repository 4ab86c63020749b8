//! Seeded synthetic phoneme/viseme corpus.
//!
//! Audio identifies the phoneme: a fixed chord of bin-centred sinusoids per
//! phoneme id plus Gaussian noise. Video identifies only the viseme class: a
//! rendered mouth whose aperture and width are functions of the class, so
//! phonemes sharing a class look alike up to jitter.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::alignment::PhonemeInterval;
use super::inventory::PhonemeInventory;
use super::lips::{FaceLandmarks, LANDMARK_COUNT};
use super::store::{Clip, Corpus};
use crate::error::{PaseError, Result};
use crate::frontend::quantize_sample;
use crate::nn::init::seeded_rng;

const PURPOSE_CLIP: u64 = 0x5157_4e54;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub fps: u32,
    pub phonemes_per_clip: usize,
    pub min_phoneme_s: f64,
    pub max_phoneme_s: f64,
    pub image_size: u32,
    /// Amplitude of each signature sinusoid.
    pub tone_amplitude: f64,
    pub tones_per_phoneme: usize,
    /// FFT size whose bin centres the signature tones sit on.
    pub n_fft: usize,
    pub audio_noise_std: f64,
    /// Mouth-opening height of viseme class 0, in pixels.
    pub aperture_base_px: f64,
    /// Aperture increment per viseme class, in pixels.
    pub class_gap_px: f64,
    /// Inner-mouth half-width of class 0; shrinks by one pixel per class.
    pub half_width_px: f64,
    pub lip_thickness_px: f64,
    /// Max geometric offset of the mouth centre, in pixels.
    pub position_jitter_px: f64,
    /// Max per-channel pixel perturbation, on the `[0, 1]` intensity scale.
    pub pixel_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            fps: 25,
            phonemes_per_clip: 6,
            min_phoneme_s: 0.05,
            max_phoneme_s: 0.09,
            image_size: 128,
            tone_amplitude: 0.2,
            tones_per_phoneme: 3,
            n_fft: 512,
            audio_noise_std: 0.01,
            aperture_base_px: 2.0,
            class_gap_px: 4.0,
            half_width_px: 14.0,
            lip_thickness_px: 5.0,
            position_jitter_px: 0.5,
            pixel_jitter: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, inventory: &PhonemeInventory) -> Result<()> {
        let bad = |m: &str| Err(PaseError::InvalidConfig(m.to_string()));
        if inventory.class_count() < 2 {
            return bad("synthetic inventory needs at least 2 viseme classes");
        }
        if inventory.viseme_sharing_pairs().is_empty() {
            return bad("synthetic inventory needs at least one viseme-sharing pair");
        }
        if !(self.min_phoneme_s > 0.0 && self.min_phoneme_s <= self.max_phoneme_s) {
            return bad("need 0 < min_phoneme_s <= max_phoneme_s");
        }
        if self.phonemes_per_clip == 0 || self.sample_rate_hz == 0 || self.fps == 0 {
            return bad("phonemes_per_clip, sample_rate_hz and fps must be positive");
        }
        let top_bin = signature_bins(inventory.len() - 1, self.tones_per_phoneme)
            .into_iter()
            .max()
            .unwrap_or(0);
        if top_bin >= self.n_fft / 2 {
            return bad("signature tones exceed the Nyquist bin");
        }
        let max_class = (0..inventory.len()).map(|p| inventory.viseme_class(p)).max().unwrap_or(0);
        if self.half_width_px - max_class as f64 <= 1.0 {
            return bad("mouth width collapses for the highest viseme class");
        }
        Ok(())
    }
}

/// FFT bins carrying the audio signature of `phoneme_id`.
pub fn signature_bins(phoneme_id: usize, tones: usize) -> Vec<usize> {
    const OFFSETS: [usize; 4] = [0, 7, 13, 17];
    (0..tones).map(|i| 8 + 20 * phoneme_id + OFFSETS[i % 4] + 20 * (i / 4)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MouthShape {
    /// Inner opening height.
    pub aperture_px: f64,
    /// Inner opening half-width.
    pub half_width_px: f64,
}

pub fn mouth_shape(viseme_class: usize, cfg: &SynthConfig) -> MouthShape {
    MouthShape {
        aperture_px: cfg.aperture_base_px + viseme_class as f64 * cfg.class_gap_px,
        half_width_px: cfg.half_width_px - viseme_class as f64,
    }
}

const SKIN: [f64; 3] = [0.82, 0.62, 0.52];
const LIP: [f64; 3] = [0.68, 0.24, 0.28];
const MOUTH: [f64; 3] = [0.16, 0.04, 0.08];

/// Fractional coverage of an ellipse with a one-pixel soft edge.
fn ellipse_coverage(dx: f64, dy: f64, ax: f64, ay: f64) -> f64 {
    let r = ((dx / ax).powi(2) + (dy / ay).powi(2)).sqrt();
    (0.5 - (r - 1.0) * ax.min(ay)).clamp(0.0, 1.0)
}

/// Mouth frame plus its 68 landmarks. Points 48..60 trace the outer lip,
/// 60..68 the inner opening, and the rest a fixed face outline.
pub fn render_mouth<G: Rng>(shape: MouthShape, cfg: &SynthConfig, rng: &mut G) -> (RgbImage, FaceLandmarks) {
    let size = cfg.image_size;
    let j = cfg.position_jitter_px;
    let cx = size as f64 / 2.0 + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let cy = size as f64 * 0.6 + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let (ix, iy) = (shape.half_width_px, shape.aperture_px / 2.0);
    let (ox, oy) = (ix + cfg.lip_thickness_px, iy + cfg.lip_thickness_px);

    let mut img = RgbImage::new(size, size);
    for (px, py, pixel) in img.enumerate_pixels_mut() {
        let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
        let outer = ellipse_coverage(dx, dy, ox, oy);
        let inner = ellipse_coverage(dx, dy, ix, iy);
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let base = SKIN[c] * (1.0 - outer) + LIP[c] * (outer - inner) + MOUTH[c] * inner;
            let noise = if cfg.pixel_jitter > 0.0 {
                rng.random_range(-cfg.pixel_jitter..=cfg.pixel_jitter)
            } else {
                0.0
            };
            rgb[c] = ((base + noise).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        *pixel = Rgb(rgb);
    }

    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    let face_r = size as f64 * 0.45;
    for i in 0..48 {
        let a = std::f64::consts::TAU * i as f64 / 48.0;
        points.push([size as f64 / 2.0 + face_r * a.cos(), size as f64 / 2.0 + face_r * a.sin()]);
    }
    for i in 0..12 {
        let a = std::f64::consts::PI + std::f64::consts::TAU * i as f64 / 12.0;
        points.push([cx + ox * a.cos(), cy + oy * a.sin()]);
    }
    for i in 0..8 {
        let a = std::f64::consts::PI + std::f64::consts::TAU * i as f64 / 8.0;
        points.push([cx + ix * a.cos(), cy + iy * a.sin()]);
    }
    (img, FaceLandmarks(points))
}

/// One occurrence of a phoneme's audio signature, quantised to the 16-bit grid.
pub fn phoneme_audio<G: Rng>(phoneme_id: usize, len: usize, cfg: &SynthConfig, rng: &mut G) -> Vec<f32> {
    let sr = cfg.sample_rate_hz as f64;
    let tones: Vec<(f64, f64)> = signature_bins(phoneme_id, cfg.tones_per_phoneme)
        .into_iter()
        .map(|k| {
            let freq = k as f64 * sr / cfg.n_fft as f64;
            (freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let noise = Normal::new(0.0, cfg.audio_noise_std.max(0.0)).expect("finite std");
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let tonal: f64 = tones
                .iter()
                .map(|(f, phase)| cfg.tone_amplitude * (std::f64::consts::TAU * f * t + phase).sin())
                .sum();
            let x = tonal + noise.sample(rng);
            quantize_sample(x as f32) as f32 / 32768.0
        })
        .collect()
}

fn synth_clip(index: usize, inventory: &PhonemeInventory, cfg: &SynthConfig, seed: u64) -> Clip {
    let mut rng = seeded_rng(seed, PURPOSE_CLIP, index as u64);
    let sr = cfg.sample_rate_hz as f64;
    let min_len = (cfg.min_phoneme_s * sr).round() as usize;
    let max_len = (cfg.max_phoneme_s * sr).round() as usize;

    let mut audio = Vec::new();
    let mut alignment = Vec::with_capacity(cfg.phonemes_per_clip);
    for _ in 0..cfg.phonemes_per_clip {
        let pid = rng.random_range(0..inventory.len());
        let len = rng.random_range(min_len..=max_len);
        let start = audio.len();
        audio.extend(phoneme_audio(pid, len, cfg, &mut rng));
        alignment.push(PhonemeInterval {
            label: inventory.label(pid).to_string(),
            start_s: start as f64 / sr,
            end_s: audio.len() as f64 / sr,
        });
    }

    let duration = audio.len() as f64 / sr;
    let frame_count = (duration * cfg.fps as f64 - 1e-9).ceil().max(1.0) as usize;
    let mut frames = Vec::with_capacity(frame_count);
    let mut landmarks = Vec::with_capacity(frame_count);
    for f in 0..frame_count {
        let t = f as f64 / cfg.fps as f64;
        let iv = alignment
            .iter()
            .find(|iv| t < iv.end_s)
            .unwrap_or_else(|| alignment.last().expect("clip has phonemes"));
        let class = inventory.viseme_class(inventory.id(&iv.label).expect("label from inventory"));
        let (img, lm) = render_mouth(mouth_shape(class, cfg), cfg, &mut rng);
        frames.push(img);
        landmarks.push(lm);
    }

    Clip {
        id: format!("clip_{index:04}"),
        sample_rate_hz: cfg.sample_rate_hz,
        audio,
        frames,
        landmarks,
        alignment,
    }
}

pub fn generate_synthetic_corpus(
    n_clips: usize,
    inventory: &PhonemeInventory,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Corpus> {
    cfg.validate(inventory)?;
    let clips = (0..n_clips).map(|i| synth_clip(i, inventory, cfg, seed)).collect();
    Ok(Corpus {
        inventory: inventory.clone(),
        fps: cfg.fps,
        clips,
    })
}
