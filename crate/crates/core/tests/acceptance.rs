//! Acceptance gate. Runs every primary criterion in order, prints one
//! PASS/FAIL line each, and exits non-zero if any fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use pase::alignment::{contrastive_from_similarities, contrastive_loss, total_loss, ContrastiveConfig, CrossAttention};
use pase::corpus::{generate_synthetic_corpus, sample_batch, NegativePolicy, PhonemeInventory, SegmentBank, SynthConfig};
use pase::evaluation::{evaluate, export_features, import_features, run_ablation, FeatureTrack};
use pase::frontend::{stft_spectrogram, FrontendConfig, SpectrogramScale};
use pase::model::{BatchData, ModelConfig, PaseModel};
use pase::nn::gradcheck::GradCheckOptions;
use pase::nn::init::{seeded_rng, uniform_array};
use pase::robustness::reconstruction_loss;
use pase::trainer::{finite_difference_check, train, TrainConfig, Trainer};
use pase::visual_encoder::{shape_chain, VISUAL_STACK};
use pase::PaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Steps per seed in the training-outcome run.
const OUTCOME_STEPS: u64 = 700;
const OUTCOME_SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed.as_secs_f64() < limit_s as f64
}

fn stft_oracle() -> Outcome {
    let t0 = Instant::now();
    let cfg = FrontendConfig {
        scale: SpectrogramScale::Magnitude,
        ..FrontendConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1F7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(1..=2048);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = stft_spectrogram(&x, &cfg).unwrap().values;
        let want = common::naive_dft_magnitudes(&x, cfg.n_fft, cfg.win_length, cfg.hop_length);
        assert_eq!(got.nrows(), want.len(), "frame count for length {len}");
        for (t, row) in want.iter().enumerate() {
            for (k, &w) in row.iter().enumerate() {
                worst = worst.max(common::rel_err(got[[t, k]], w, 1e-9));
            }
        }
    }
    let framing = (512..=4096).all(|n| cfg.frame_count(n + cfg.hop_length) == cfg.frame_count(n) + 1);
    let el = t0.elapsed();
    outcome(
        worst < 1e-6 && framing && within(el, 30),
        format!("worst relative error {worst:.2e}, framing identity {framing}, {:.1}s", el.as_secs_f64()),
    )
}

fn shape_audit() -> Outcome {
    let t0 = Instant::now();
    let chain = shape_chain(&VISUAL_STACK, (96, 96)).unwrap();
    let mut distinct = chain.clone();
    distinct.dedup();
    let want = vec![(96, 96), (94, 47), (47, 24), (24, 12), (12, 6), (6, 3), (1, 1)];
    let el = t0.elapsed();
    outcome(
        chain.len() == 15 && distinct == want && within(el, 1),
        format!("chain {distinct:?}, {:.3}s", el.as_secs_f64()),
    )
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let inv = PhonemeInventory::desk();
    let corpus = generate_synthetic_corpus(2, &inv, 1, &SynthConfig::default()).unwrap();
    let fe = FrontendConfig::default();
    let bank = SegmentBank::build(&corpus, &fe).unwrap();
    let batch = sample_batch(&bank, &bank.all_indices(), 3, 2, 5, NegativePolicy::InBatch).unwrap();
    let cfg = ModelConfig {
        embed_dim: 8,
        crop_size: 96,
        ..ModelConfig::default()
    };
    let data = BatchData::<f64>::gather(&bank, &batch, &cfg, 0.5, 3).unwrap();
    let model = PaseModel::<f64>::new(&cfg, fe.feature_dim(), inv.len(), 0).unwrap();
    let opts = GradCheckOptions {
        max_per_tensor: Some(6),
        ..GradCheckOptions::default()
    };
    let r = finite_difference_check(&model, &data, &ContrastiveConfig::default(), 1e-5, &opts).unwrap();
    let el = t0.elapsed();
    outcome(
        r.max_relative_error < 1e-4 && r.checked > 0 && within(el, 120),
        format!(
            "max relative error {:.2e} at {}, {} entries checked, {} kink crossings skipped, {:.1}s",
            r.max_relative_error,
            r.worst,
            r.checked,
            r.kinks,
            el.as_secs_f64()
        ),
    )
}

fn closed_form_losses() -> Outcome {
    let cfg = ContrastiveConfig::default();
    let a = ndarray::array![0.6f64, -0.8, 0.0];
    let o = ndarray::array![0.8f64, 0.6, 0.0];
    let none = contrastive_loss(a.view(), a.view(), &[], &cfg).unwrap();
    let sym = contrastive_loss(a.view(), o.view(), &[o.view()], &cfg).unwrap();
    let v = uniform_array::<f64, _, _, _>(&mut seeded_rng(1, 0, 0), (4, 6), 1.0);
    let au = uniform_array::<f64, _, _, _>(&mut seeded_rng(2, 0, 0), (7, 6), 1.0);
    let rec = reconstruction_loss(v.view(), v.view(), au.view(), au.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x707A);
    let mut exact = true;
    for _ in 0..1000 {
        let (l_con, l_rec, alpha) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(0.0..5.0));
        let c = ContrastiveConfig { alpha, ..cfg };
        exact &= total_loss(l_con, l_rec, &c) == l_con + alpha * l_rec;
    }
    let sym_core = contrastive_from_similarities(0.3f64, &[0.3], 0.07);
    let pass = none == 0.0
        && (sym - std::f64::consts::LN_2).abs() <= 1e-10
        && (sym_core - std::f64::consts::LN_2).abs() <= 1e-10
        && rec == 0.0
        && exact;
    outcome(
        pass,
        format!(
            "no negatives {none}, symmetric |l - ln 2| {:.1e}, reconstruction {rec}, total identity on 1000 triples {exact}",
            (sym - std::f64::consts::LN_2).abs()
        ),
    )
}

fn attention_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA77E);
    let (mut negative, mut worst_sum, mut single_exact) = (0usize, 0.0f64, true);
    for i in 0..1000u64 {
        let heads = [1usize, 2, 4][rng.random_range(0..3)];
        let dim = heads * rng.random_range(1..5);
        let tv = rng.random_range(1..10);
        let mut r = seeded_rng(0xA77E, 0, i);
        let att = CrossAttention::<f64>::uniform(dim, heads, &mut r);
        let q: Array1<f64> = uniform_array(&mut r, dim, 3.0);
        let kv: Array2<f64> = uniform_array(&mut r, (tv, dim), 3.0);
        let (out, trace) = att.forward(q.view(), kv.view()).unwrap();
        negative += trace.weights.iter().filter(|&&w| w < 0.0).count();
        for row in trace.weights.rows() {
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }
        let one = kv.slice(ndarray::s![..1, ..]);
        let (single, _) = att.forward(q.view(), one).unwrap();
        single_exact &= single == att.value.forward_rows(one).row(0);
        assert_eq!(out.len(), dim);
    }
    outcome(
        negative == 0 && worst_sum <= 1e-6 && single_exact,
        format!("negative weights {negative}, worst |sum - 1| {worst_sum:.1e}, T_v = 1 exact {single_exact}"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v[v.len() / 2]
}

/// Runs the training-outcome criterion; also returns the per-seed flag
/// "probe loss after 200 steps is below the initial probe loss".
fn training_outcome() -> (Outcome, Outcome) {
    let t0 = Instant::now();
    let inv = PhonemeInventory::desk();
    let (t, d) = (inv.id("T").unwrap(), inv.id("D").unwrap());
    let shape_ok = inv.len() == 8 && inv.class_count() == 4 && inv.same_viseme(t, d);
    let (mut accs, mut gaps, mut drops) = (Vec::new(), Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for seed in 0..OUTCOME_SEEDS {
        let corpus = generate_synthetic_corpus(200, &inv, seed, &SynthConfig::default()).unwrap();
        let cfg = TrainConfig {
            seed,
            steps: OUTCOME_STEPS,
            ..TrainConfig::default()
        };
        assert_eq!((cfg.batch_size, cfg.learning_rate), (16, 5e-5));
        let mut trainer = Trainer::new(&cfg, &corpus).unwrap();
        let initial = trainer.probe_loss().unwrap();
        let mut at_200 = f64::NAN;
        while trainer.step < cfg.steps {
            trainer.step().unwrap();
            if trainer.step == 200 {
                at_200 = trainer.probe_loss().unwrap();
            }
        }
        let report = evaluate(&trainer.model, &trainer.bank, &trainer.eval_pool, 4, seed).unwrap();
        let gap = report.ambiguity.gap().unwrap_or(f64::NAN);
        per_seed.push(format!("seed {seed}: acc {:.3} gap {gap:.3}", report.retrieval_accuracy));
        accs.push(report.retrieval_accuracy);
        gaps.push(gap);
        drops.push(at_200 - initial);
    }
    let el = t0.elapsed();
    let (acc, gap) = (median(accs), median(gaps));
    let main = outcome(
        shape_ok && acc >= 0.90 && gap >= 0.15 && within(el, 900),
        format!(
            "median retrieval@4 {acc:.3}, median viseme gap {gap:.3}, {OUTCOME_STEPS} steps x {OUTCOME_SEEDS} seeds in {:.0}s [{}]",
            el.as_secs_f64(),
            per_seed.join("; ")
        ),
    );
    let drop = median(drops);
    let side = outcome(drop < 0.0, format!("median probe-loss change after 200 steps {drop:.4}"));
    (main, side)
}

fn ablation() -> Outcome {
    let t0 = Instant::now();
    let corpus = generate_synthetic_corpus(40, &PhonemeInventory::desk(), 7, &SynthConfig::default()).unwrap();
    let base = TrainConfig {
        steps: 20,
        seed: 7,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ablation.txt");
    let mut lines = Vec::new();
    let cells = run_ablation(&base, &corpus, 4, |c| lines.push(c.record())).unwrap();
    fs::write(&log, lines.join("\n")).unwrap();
    let logged = fs::read_to_string(&log).unwrap().lines().count();
    let finite = cells
        .iter()
        .all(|c| c.initial_loss.is_finite() && c.final_loss.is_finite() && (0.0..=1.0).contains(&c.retrieval_accuracy));
    outcome(
        cells.len() == 4 && logged == 4 && finite,
        format!("{} cells, {logged} records, {:.0}s: {}", cells.len(), t0.elapsed().as_secs_f64(), lines.join(" | ")),
    )
}

fn determinism() -> Outcome {
    let corpus = generate_synthetic_corpus(12, &PhonemeInventory::desk(), 3, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig {
        steps: 6,
        checkpoint_every: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&cfg, &corpus, Some(da.path())).unwrap();
    let b = train(&cfg, &corpus, Some(db.path())).unwrap();
    let mut names: Vec<String> = fs::read_dir(da.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let files_equal = names
        .iter()
        .all(|n| fs::read(da.path().join(n)).ok() == fs::read(db.path().join(n)).ok());
    let stream = |m: &[pase::trainer::StepMetrics]| m.iter().map(|x| x.to_record()).collect::<Vec<_>>();
    let metrics_equal = stream(&a.metrics) == stream(&b.metrics);
    let ckpt_equal = a.checkpoint.to_bytes().unwrap() == b.checkpoint.to_bytes().unwrap();
    outcome(
        files_equal && metrics_equal && ckpt_equal && names.len() >= 4,
        format!("{} files compared {:?}, metric streams equal {metrics_equal}", names.len(), names),
    )
}

fn feature_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEA7);
    let mut ok = 0;
    for i in 0..100 {
        let (n, dim) = (rng.random_range(0..60), rng.random_range(1..40));
        let track = FeatureTrack {
            fps: 25,
            frames: Array2::from_shape_fn((n, dim), |_| rng.random_range(-10.0f32..10.0)),
            source: String::new(),
        };
        let path = dir.path().join(format!("t{i}.pase"));
        export_features(&track, &path).unwrap();
        let back = import_features(&path).unwrap();
        let bytes_back = back.to_bytes().unwrap();
        if back.frames == track.frames && back.fps == track.fps && bytes_back == fs::read(&path).unwrap() {
            ok += 1;
        }
    }
    let good = FeatureTrack {
        fps: 25,
        frames: Array2::from_elem((2, 3), 1.5f32),
        source: String::new(),
    }
    .to_bytes()
    .unwrap();
    let mut magic = good.clone();
    magic[1] = b'?';
    let mut version = good.clone();
    version[4] = 7;
    let mut long = good.clone();
    long.push(0);
    let errors = [
        matches!(FeatureTrack::from_bytes(&magic, ""), Err(PaseError::BadMagic)),
        matches!(FeatureTrack::from_bytes(&good[..6], ""), Err(PaseError::TruncatedHeader)),
        matches!(FeatureTrack::from_bytes(&version, ""), Err(PaseError::UnsupportedVersion(7))),
        matches!(FeatureTrack::from_bytes(&good[..good.len() - 4], ""), Err(PaseError::TruncatedPayload)),
        matches!(FeatureTrack::from_bytes(&long, ""), Err(PaseError::InconsistentHeader)),
    ];
    let all_errors = errors.iter().all(|&e| e);
    outcome(
        ok == 100 && all_errors,
        format!("{ok}/100 tracks round-trip, header error cases {errors:?}"),
    )
}

fn run(name: &str, failures: &mut usize, f: impl FnOnce() -> Outcome) {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    if !result.pass {
        *failures += 1;
    }
    println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
}

fn main() {
    let mut failures = 0;
    run("stft-oracle", &mut failures, stft_oracle);
    run("shape-audit", &mut failures, shape_audit);
    run("gradient-fidelity", &mut failures, gradient_fidelity);
    run("closed-form-losses", &mut failures, closed_form_losses);
    run("attention-contract", &mut failures, attention_contract);
    let mut side = None;
    run("training-outcome", &mut failures, || {
        let (main, s) = training_outcome();
        side = Some(s);
        main
    });
    if let Some(s) = side {
        println!("{} training-loss-decrease (supplementary): {}", if s.pass { "PASS" } else { "FAIL" }, s.detail);
        if !s.pass {
            failures += 1;
        }
    }
    run("ablation-harness", &mut failures, ablation);
    run("determinism", &mut failures, determinism);
    run("feature-file-round-trip", &mut failures, feature_round_trip);
    println!("acceptance: {} failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
