use pase::corpus::{generate_synthetic_corpus, sample_batch, Corpus, NegativePolicy, PhonemeInventory, SegmentBank, SynthConfig};
use pase::frontend::FrontendConfig;
use pase::trainer::{TrainConfig, Trainer};
use pase::PaseError;
use proptest::prelude::*;

fn bank(clips: usize, seed: u64) -> SegmentBank {
    let corpus = generate_synthetic_corpus(clips, &PhonemeInventory::desk(), seed, &SynthConfig::default()).unwrap();
    SegmentBank::build_sized(&corpus, &FrontendConfig::default(), 24).unwrap()
}

/// Desk corpus whose every interval is relabelled to /p/ or /b/.
fn labial_only(clips: usize) -> Corpus {
    let mut corpus = generate_synthetic_corpus(clips, &PhonemeInventory::desk(), 4, &SynthConfig::default()).unwrap();
    for clip in &mut corpus.clips {
        for (i, iv) in clip.alignment.iter_mut().enumerate() {
            iv.label = if i % 2 == 0 { "P".into() } else { "B".into() };
        }
    }
    corpus
}

#[test]
fn disk_round_trip_preserves_the_bank() {
    let corpus = generate_synthetic_corpus(3, &PhonemeInventory::desk(), 2, &SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.save_dir(dir.path()).unwrap();
    let back = Corpus::load_dir(dir.path()).unwrap();
    assert_eq!(back, corpus);
    let fc = FrontendConfig::default();
    let (a, b) = (SegmentBank::build_sized(&corpus, &fc, 24).unwrap(), SegmentBank::build_sized(&back, &fc, 24).unwrap());
    assert_eq!(a.segments, b.segments);
}

#[test]
fn labial_only_corpus_has_no_negatives() {
    let corpus = labial_only(3);
    let b = SegmentBank::build_sized(&corpus, &FrontendConfig::default(), 24).unwrap();
    let pool = b.all_indices();
    let err = sample_batch(&b, &pool, 4, 1, 0, NegativePolicy::Corpus).unwrap_err();
    assert!(matches!(err, PaseError::NoValidNegatives), "{err}");

    let err = Trainer::new(&TrainConfig::default(), &corpus).unwrap_err();
    assert!(matches!(err, PaseError::NoValidNegatives), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_respect_class_constraints(
        seed in any::<u64>(),
        batch in 1usize..20,
        negs in 0usize..6,
        in_batch in any::<bool>(),
    ) {
        let b = bank(4, 1);
        let pool = b.all_indices();
        let policy = if in_batch { NegativePolicy::InBatch } else { NegativePolicy::Corpus };
        let x = sample_batch(&b, &pool, batch, negs, seed, policy).unwrap();
        prop_assert_eq!(x.len(), batch);
        prop_assert!(x.negatives.iter().all(|n| n.len() == negs));
        prop_assert!(x.negatives_valid(&b));
        for (&a, &p) in x.anchors.iter().zip(&x.phoneme_ids) {
            prop_assert_eq!(b.segments[a].phoneme_id, p);
        }
        prop_assert_eq!(sample_batch(&b, &pool, batch, negs, seed, policy).unwrap(), x);
    }
}
