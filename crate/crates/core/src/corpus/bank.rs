//! Preprocessed segments (spectrogram + lip crops) and contrastive batch sampling.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::inventory::PhonemeInventory;
use super::lips::{build_window, crop_lips_sized, LipCrop, LipWindow, CROP_SIZE};
use super::segment::segment_clip;
use super::store::Corpus;
use crate::error::{PaseError, Result};
use crate::frontend::{FrontendConfig, SpectrogramExtractor};
use crate::nn::init::seeded_rng;

const PURPOSE_BATCH: u64 = 0xBA7C;

#[derive(Debug, Clone, PartialEq)]
pub struct BankSegment {
    pub phoneme_id: usize,
    pub viseme_class: usize,
    pub clip: usize,
    pub frame_indices: Vec<usize>,
    /// `T × F` front-end output.
    pub spectrogram: Array2<f32>,
    pub start_s: f64,
    pub end_s: f64,
}

/// Every phoneme segment of a corpus, ready for the encoders.
#[derive(Debug, Clone)]
pub struct SegmentBank {
    pub inventory: PhonemeInventory,
    pub frontend: FrontendConfig,
    pub segments: Vec<BankSegment>,
    pub clip_ids: Vec<String>,
    /// Lip crops per clip, indexed by frame.
    crops: Vec<Vec<LipCrop>>,
}

impl SegmentBank {
    pub fn build(corpus: &Corpus, frontend: &FrontendConfig) -> Result<Self> {
        Self::build_sized(corpus, frontend, CROP_SIZE)
    }

    pub fn build_sized(corpus: &Corpus, frontend: &FrontendConfig, crop_size: usize) -> Result<Self> {
        corpus.validate()?;
        let extractor = SpectrogramExtractor::new(frontend)?;
        let mut segments = Vec::new();
        let mut crops = Vec::with_capacity(corpus.clips.len());
        for (ci, clip) in corpus.clips.iter().enumerate() {
            let clip_crops = clip
                .frames
                .iter()
                .zip(&clip.landmarks)
                .map(|(img, lm)| crop_lips_sized(img, lm, crop_size))
                .collect::<Result<Vec<_>>>()?;
            crops.push(clip_crops);
            let segs = segment_clip(
                &clip.audio,
                clip.sample_rate_hz,
                clip.frames.len(),
                corpus.fps,
                &clip.alignment,
                &corpus.inventory,
                &clip.id,
            )?;
            for seg in segs {
                let spec = extractor.compute(&seg.audio)?;
                segments.push(BankSegment {
                    phoneme_id: seg.phoneme_id,
                    viseme_class: corpus.inventory.viseme_class(seg.phoneme_id),
                    clip: ci,
                    frame_indices: seg.frame_indices,
                    spectrogram: spec.values.mapv(|v| v as f32),
                    start_s: seg.start_s,
                    end_s: seg.end_s,
                });
            }
        }
        Ok(Self {
            inventory: corpus.inventory.clone(),
            frontend: frontend.clone(),
            segments,
            clip_ids: corpus.clips.iter().map(|c| c.id.clone()).collect(),
            crops,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn clip_count(&self) -> usize {
        self.crops.len()
    }

    pub fn clip_crops(&self, clip: usize) -> &[LipCrop] {
        &self.crops[clip]
    }

    /// One window per frame of the segment, each centred on that frame.
    pub fn visual_windows(&self, segment: usize) -> Result<Vec<LipWindow>> {
        let seg = &self.segments[segment];
        seg.frame_indices
            .iter()
            .map(|&f| build_window(&self.crops[seg.clip], f))
            .collect()
    }

    /// Segment indices split by clip: the last `ceil(fraction · clips)` clips
    /// are held out.
    pub fn split_by_clip(&self, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let held = ((self.clip_count() as f64) * holdout_fraction.clamp(0.0, 1.0)).ceil() as usize;
        let first_held = self.clip_count() - held.min(self.clip_count());
        (0..self.len()).partition(|&i| self.segments[i].clip < first_held)
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Where negatives are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// Uniformly from every pool segment of another viseme class.
    #[default]
    Corpus,
    /// From the other anchors of the same batch, topped up from the pool when
    /// the batch holds too few of another class.
    InBatch,
}

/// Bank indices for one contrastive step. The positive of anchor `i` is its
/// own visual sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentBatch {
    pub anchors: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
    pub phoneme_ids: Vec<usize>,
}

impl AlignmentBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Every negative comes from a different viseme class than its anchor.
    pub fn negatives_valid(&self, bank: &SegmentBank) -> bool {
        self.anchors.iter().zip(&self.negatives).all(|(&a, negs)| {
            let class = bank.segments[a].viseme_class;
            negs.iter().all(|&n| bank.segments[n].viseme_class != class)
        })
    }

    /// Distinct segments whose visual sequences the batch needs, in first-use order.
    pub fn visual_segments(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &i in self.anchors.iter().chain(self.negatives.iter().flatten()) {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }
}

/// `k` picks from `candidates`: without replacement when possible.
fn pick<G: Rng>(rng: &mut G, candidates: &[usize], k: usize) -> Vec<usize> {
    if candidates.len() >= k {
        index::sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect()
    } else {
        (0..k).map(|_| candidates[rng.random_range(0..candidates.len())]).collect()
    }
}

/// Deterministic batch from `pool` (bank indices).
pub fn sample_batch(
    bank: &SegmentBank,
    pool: &[usize],
    batch_size: usize,
    negatives_per_anchor: usize,
    seed: u64,
    policy: NegativePolicy,
) -> Result<AlignmentBatch> {
    if pool.is_empty() || batch_size == 0 {
        return Err(PaseError::Corpus("empty sampling pool or batch".into()));
    }
    let class_of = |i: usize| bank.segments[i].viseme_class;
    let first = class_of(pool[0]);
    if pool.iter().all(|&i| class_of(i) == first) {
        return Err(PaseError::NoValidNegatives);
    }
    let mut rng = seeded_rng(seed, PURPOSE_BATCH, 0);
    let anchors = pick(&mut rng, pool, batch_size);

    let mut negatives = Vec::with_capacity(anchors.len());
    for &a in &anchors {
        let class = class_of(a);
        let in_pool: Vec<usize> = pool.iter().copied().filter(|&i| class_of(i) != class).collect();
        let negs = match policy {
            NegativePolicy::Corpus => pick(&mut rng, &in_pool, negatives_per_anchor),
            NegativePolicy::InBatch => {
                let mut in_batch: Vec<usize> = Vec::new();
                for &b in &anchors {
                    if class_of(b) != class && !in_batch.contains(&b) {
                        in_batch.push(b);
                    }
                }
                if in_batch.len() >= negatives_per_anchor {
                    pick(&mut rng, &in_batch, negatives_per_anchor)
                } else {
                    let rest: Vec<usize> = in_pool.iter().copied().filter(|i| !in_batch.contains(i)).collect();
                    let missing = negatives_per_anchor - in_batch.len();
                    let mut negs = in_batch;
                    negs.extend(pick(&mut rng, if rest.is_empty() { &in_pool } else { &rest }, missing));
                    negs
                }
            }
        };
        negatives.push(negs);
    }
    let phoneme_ids = anchors.iter().map(|&a| bank.segments[a].phoneme_id).collect();
    Ok(AlignmentBatch {
        anchors,
        negatives,
        phoneme_ids,
    })
}
