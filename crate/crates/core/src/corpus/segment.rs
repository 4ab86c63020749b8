use super::alignment::PhonemeInterval;
use super::inventory::PhonemeInventory;
use crate::error::{PaseError, Result};

pub const VIDEO_FPS: u32 = 25;

/// Boundary slack when comparing times against the frame grid.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSegment {
    pub phoneme_id: usize,
    pub audio: Vec<f32>,
    pub frame_indices: Vec<usize>,
    pub clip_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Audio sample range `[round(start·sr), round(end·sr))`.
pub fn sample_range(interval: &PhonemeInterval, sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    (
        (interval.start_s * sr).round() as usize,
        (interval.end_s * sr).round() as usize,
    )
}

/// Video frames whose timestamp `f / fps` falls in `[start, end)`; if none do,
/// the single frame containing the interval midpoint.
pub fn frames_for_interval(interval: &PhonemeInterval, fps: u32, frame_count: usize) -> Vec<usize> {
    let fps = fps as f64;
    let lo = (interval.start_s * fps - GRID_EPS).ceil().max(0.0) as usize;
    let hi = ((interval.end_s * fps - GRID_EPS).ceil().max(0.0) as usize).min(frame_count);
    let frames: Vec<usize> = (lo..hi).collect();
    if !frames.is_empty() || frame_count == 0 {
        return frames;
    }
    let mid = 0.5 * (interval.start_s + interval.end_s);
    vec![((mid * fps + GRID_EPS).floor() as usize).min(frame_count - 1)]
}

pub fn segment_clip(
    audio: &[f32],
    sample_rate: u32,
    frame_count: usize,
    fps: u32,
    intervals: &[PhonemeInterval],
    inventory: &PhonemeInventory,
    clip_id: &str,
) -> Result<Vec<PhonemeSegment>> {
    if frame_count == 0 {
        return Err(PaseError::EmptyClip);
    }
    let duration_s = audio.len() as f64 / sample_rate as f64;
    let mut out = Vec::with_capacity(intervals.len());
    for iv in intervals {
        if iv.end_s > duration_s + GRID_EPS {
            return Err(PaseError::IntervalPastEnd {
                start_s: iv.start_s,
                end_s: iv.end_s,
                duration_s,
            });
        }
        let phoneme_id = inventory
            .id(&iv.label)
            .ok_or_else(|| PaseError::UnknownPhoneme(format!("{} in clip {clip_id}", iv.label)))?;
        let (a, b) = sample_range(iv, sample_rate);
        let b = b.min(audio.len());
        out.push(PhonemeSegment {
            phoneme_id,
            audio: audio[a..b].to_vec(),
            frame_indices: frames_for_interval(iv, fps, frame_count),
            clip_id: clip_id.to_string(),
            start_s: iv.start_s,
            end_s: iv.end_s,
        });
    }
    Ok(out)
}
