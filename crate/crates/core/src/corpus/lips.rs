//! 68-point landmark files, lip cropping and 5-frame window stacking.

use std::path::Path;

use image::RgbImage;
use ndarray::{s, Array3};

use crate::error::{PaseError, Result};

pub const LANDMARK_COUNT: usize = 68;
/// Mouth points 48..68 of the 68-point convention (0-indexed, end exclusive).
pub const LIP_LANDMARKS: std::ops::Range<usize> = 48..68;
/// Total growth of the lip box: 10% of its width/height on each side.
pub const CROP_MARGIN: f64 = 0.2;
pub const CROP_SIZE: usize = 96;
pub const WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceLandmarks(pub Vec<[f64; 2]>);

impl FaceLandmarks {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(PaseError::Corpus(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points.len()
            )));
        }
        Ok(Self(points))
    }

    pub fn lips(&self) -> &[[f64; 2]] {
        &self.0[LIP_LANDMARKS]
    }
}

/// Parses `x y` lines, 68 per frame. Blank lines and `#` comments are ignored.
pub fn parse_landmarks(text: &str) -> Result<Vec<FaceLandmarks>> {
    let mut frames = Vec::new();
    let mut current = Vec::with_capacity(LANDMARK_COUNT);
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        last_line = n;
        let mut it = line.split_whitespace();
        let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
            return Err(PaseError::MalformedLine {
                line: n,
                reason: "expected `x y`".into(),
            });
        };
        let parse = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PaseError::MalformedLine {
                    line: n,
                    reason: format!("invalid coordinate {v:?}"),
                })
        };
        current.push([parse(x)?, parse(y)?]);
        if current.len() == LANDMARK_COUNT {
            frames.push(FaceLandmarks(std::mem::replace(
                &mut current,
                Vec::with_capacity(LANDMARK_COUNT),
            )));
        }
    }
    if !current.is_empty() {
        return Err(PaseError::MalformedLine {
            line: last_line,
            reason: format!("incomplete frame: {} of {LANDMARK_COUNT} points", current.len()),
        });
    }
    Ok(frames)
}

pub fn read_landmarks(path: &Path) -> Result<Vec<FaceLandmarks>> {
    parse_landmarks(&std::fs::read_to_string(path)?)
}

pub fn landmarks_to_string(frames: &[FaceLandmarks]) -> String {
    let mut s = String::new();
    for (f, frame) in frames.iter().enumerate() {
        if f > 0 {
            s.push('\n');
        }
        for [x, y] in &frame.0 {
            s.push_str(&format!("{x} {y}\n"));
        }
    }
    s
}

/// Axis-aligned crop rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Bounding box of the lip landmarks, grown by [`CROP_MARGIN`] and clamped to
/// the image.
pub fn lip_box(landmarks: &FaceLandmarks, width: u32, height: u32) -> Result<CropBox> {
    let lips = landmarks.lips();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for [x, y] in lips {
        x0 = x0.min(*x);
        y0 = y0.min(*y);
        x1 = x1.max(*x);
        y1 = y1.max(*y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 0.0 || h <= 0.0 {
        return Err(PaseError::DegenerateLandmarks);
    }
    let (mx, my) = (w * CROP_MARGIN / 2.0, h * CROP_MARGIN / 2.0);
    let b = CropBox {
        x0: (x0 - mx).clamp(0.0, width as f64),
        y0: (y0 - my).clamp(0.0, height as f64),
        x1: (x1 + mx).clamp(0.0, width as f64),
        y1: (y1 + my).clamp(0.0, height as f64),
    };
    if b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(PaseError::DegenerateLandmarks);
    }
    Ok(b)
}

/// `3 × S × S` RGB crop with values in `[0, 1]`.
pub type LipCrop = Array3<f32>;

/// Bilinear resample of `region` to `size × size`.
pub fn resample(image: &RgbImage, region: CropBox, size: usize) -> LipCrop {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = Array3::<f32>::zeros((3, size, size));
    let sample_axis = |o: usize, start: f64, extent: f64, limit: usize| -> (usize, usize, f64) {
        let s = (start + (o as f64 + 0.5) * extent / size as f64 - 0.5).clamp(0.0, (limit - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(limit - 1);
        (i0, i1, s - i0 as f64)
    };
    for oy in 0..size {
        let (y0, y1, fy) = sample_axis(oy, region.y0, region.height(), h);
        for ox in 0..size {
            let (x0, x1, fx) = sample_axis(ox, region.x0, region.width(), w);
            let p00 = image.get_pixel(x0 as u32, y0 as u32);
            let p01 = image.get_pixel(x1 as u32, y0 as u32);
            let p10 = image.get_pixel(x0 as u32, y1 as u32);
            let p11 = image.get_pixel(x1 as u32, y1 as u32);
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                out[[c, oy, ox]] = ((top * (1.0 - fy) + bottom * fy) / 255.0) as f32;
            }
        }
    }
    out
}

pub fn crop_lips(image: &RgbImage, landmarks: &FaceLandmarks) -> Result<LipCrop> {
    crop_lips_sized(image, landmarks, CROP_SIZE)
}

pub fn crop_lips_sized(image: &RgbImage, landmarks: &FaceLandmarks, size: usize) -> Result<LipCrop> {
    let region = lip_box(landmarks, image.width(), image.height())?;
    Ok(resample(image, region, size))
}

/// Consecutive crops stacked channel-wise (frame-major RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct LipWindow {
    pub pixels: Array3<f32>,
    pub center_frame: usize,
}

impl LipWindow {
    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }
}

pub fn build_window(frames: &[LipCrop], center: usize) -> Result<LipWindow> {
    build_window_sized(frames, center, WINDOW)
}

/// Frames `center − size/2 ..= center + size/2`, edge-replicated at clip bounds.
pub fn build_window_sized(frames: &[LipCrop], center: usize, size: usize) -> Result<LipWindow> {
    if frames.is_empty() {
        return Err(PaseError::EmptyClip);
    }
    if center >= frames.len() {
        return Err(PaseError::Corpus(format!(
            "window centre {center} outside clip of {} frames",
            frames.len()
        )));
    }
    if size == 0 || size % 2 == 0 {
        return Err(PaseError::InvalidConfig(format!("window size must be odd, got {size}")));
    }
    let (c, h, w) = frames[0].dim();
    let half = (size / 2) as isize;
    let mut pixels = Array3::<f32>::zeros((c * size, h, w));
    for (slot, offset) in (-half..=half).enumerate() {
        let idx = (center as isize + offset).clamp(0, frames.len() as isize - 1) as usize;
        let frame = &frames[idx];
        if frame.dim() != (c, h, w) {
            return Err(PaseError::DimensionMismatch("lip crops differ in shape".into()));
        }
        pixels.slice_mut(s![slot * c..(slot + 1) * c, .., ..]).assign(frame);
    }
    Ok(LipWindow {
        pixels,
        center_frame: center,
    })
}
