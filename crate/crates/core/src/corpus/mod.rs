//! Phoneme-aligned audio/video ingestion, synthetic data and batch sampling.

pub mod alignment;
pub mod bank;
pub mod inventory;
pub mod lips;
pub mod segment;
pub mod store;
pub mod synth;

pub use alignment::{parse_alignment, parse_alignment_str, PhonemeInterval};
pub use bank::{sample_batch, AlignmentBatch, BankSegment, NegativePolicy, SegmentBank};
pub use inventory::PhonemeInventory;
pub use lips::{build_window, build_window_sized, crop_lips, FaceLandmarks, LipCrop, LipWindow};
pub use segment::{segment_clip, PhonemeSegment};
pub use store::{Clip, Corpus};
pub use synth::{generate_synthetic_corpus, SynthConfig};
