//! In-memory corpus and its on-disk layout:
//!
//! ```text
//! root/
//!   manifest.toml       fps, sample rate, clip ids
//!   inventory.tsv       LABEL<TAB>viseme_class
//!   clip_0000/
//!     audio.wav         16-bit mono PCM
//!     alignment.tsv
//!     landmarks.txt
//!     frame_00000.png …
//! ```

use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::alignment::{alignment_to_tsv, parse_alignment, PhonemeInterval};
use super::inventory::PhonemeInventory;
use super::lips::{landmarks_to_string, read_landmarks, FaceLandmarks};
use crate::error::{PaseError, Result};
use crate::frontend::{read_wav, write_wav};

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub sample_rate_hz: u32,
    pub audio: Vec<f32>,
    pub frames: Vec<RgbImage>,
    pub landmarks: Vec<FaceLandmarks>,
    pub alignment: Vec<PhonemeInterval>,
}

impl Clip {
    pub fn duration_s(&self) -> f64 {
        self.audio.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub inventory: PhonemeInventory,
    pub fps: u32,
    pub clips: Vec<Clip>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    fps: u32,
    sample_rate_hz: u32,
    clips: Vec<String>,
}

impl Corpus {
    /// Structural checks that must hold before segmentation or training.
    pub fn validate(&self) -> Result<()> {
        if self.clips.is_empty() {
            return Err(PaseError::Corpus("corpus has no clips".into()));
        }
        if self.fps == 0 {
            return Err(PaseError::Corpus("fps must be positive".into()));
        }
        let sr = self.clips[0].sample_rate_hz;
        for clip in &self.clips {
            let err = |m: String| Err(PaseError::Corpus(format!("{}: {m}", clip.id)));
            if clip.sample_rate_hz != sr {
                return err(format!("sample rate {} differs from {sr}", clip.sample_rate_hz));
            }
            if clip.frames.is_empty() {
                return err("no frames".into());
            }
            if clip.frames.len() != clip.landmarks.len() {
                return err(format!(
                    "{} frames but {} landmark sets",
                    clip.frames.len(),
                    clip.landmarks.len()
                ));
            }
            if clip.audio.is_empty() {
                return err("empty audio".into());
            }
            for iv in &clip.alignment {
                if self.inventory.id(&iv.label).is_none() {
                    return Err(PaseError::UnknownPhoneme(format!("{} in clip {}", iv.label, clip.id)));
                }
                if iv.end_s > clip.duration_s() + 1e-9 {
                    return Err(PaseError::IntervalPastEnd {
                        start_s: iv.start_s,
                        end_s: iv.end_s,
                        duration_s: clip.duration_s(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.clips.first().map_or(16_000, |c| c.sample_rate_hz)
    }

    pub fn save_dir(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        let manifest = Manifest {
            fps: self.fps,
            sample_rate_hz: self.sample_rate_hz(),
            clips: self.clips.iter().map(|c| c.id.clone()).collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| PaseError::Corpus(e.to_string()))?;
        fs::write(root.join("manifest.toml"), text)?;
        fs::write(root.join("inventory.tsv"), self.inventory.to_tsv())?;
        for clip in &self.clips {
            let dir = root.join(&clip.id);
            fs::create_dir_all(&dir)?;
            write_wav(&dir.join("audio.wav"), &clip.audio, clip.sample_rate_hz)?;
            fs::write(dir.join("alignment.tsv"), alignment_to_tsv(&clip.alignment))?;
            fs::write(dir.join("landmarks.txt"), landmarks_to_string(&clip.landmarks))?;
            for (i, frame) in clip.frames.iter().enumerate() {
                frame.save(dir.join(format!("frame_{i:05}.png")))?;
            }
        }
        Ok(())
    }

    pub fn load_dir(root: &Path) -> Result<Self> {
        let text = fs::read_to_string(root.join("manifest.toml"))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| PaseError::Corpus(format!("manifest.toml: {e}")))?;
        let inventory = PhonemeInventory::from_tsv(&fs::read_to_string(root.join("inventory.tsv"))?)?;
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for id in &manifest.clips {
            let dir = root.join(id);
            let (audio, sample_rate_hz) = read_wav(&dir.join("audio.wav"))?;
            let alignment = parse_alignment(&dir.join("alignment.tsv"))?;
            let landmarks = read_landmarks(&dir.join("landmarks.txt"))?;
            let mut frames = Vec::new();
            loop {
                let path = dir.join(format!("frame_{:05}.png", frames.len()));
                if !path.exists() {
                    break;
                }
                frames.push(image::open(&path)?.to_rgb8());
            }
            clips.push(Clip {
                id: id.clone(),
                sample_rate_hz,
                audio,
                frames,
                landmarks,
                alignment,
            });
        }
        let corpus = Corpus {
            inventory,
            fps: manifest.fps,
            clips,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic_corpus, SynthConfig};

    #[test]
    fn disk_round_trip() {
        let corpus = generate_synthetic_corpus(2, &PhonemeInventory::desk(), 4, &SynthConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.save_dir(dir.path()).unwrap();
        assert_eq!(Corpus::load_dir(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn validate_catches_frame_landmark_mismatch() {
        let mut corpus =
            generate_synthetic_corpus(1, &PhonemeInventory::desk(), 4, &SynthConfig::default()).unwrap();
        corpus.clips[0].landmarks.pop();
        assert!(corpus.validate().is_err());
        corpus.clips.clear();
        assert!(corpus.validate().is_err());
    }
}
