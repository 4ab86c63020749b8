//! Frame-rate feature export, retrieval accuracy, phoneme-pair similarity,
//! PCA projection and the four-cell front-end/encoder ablation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::alignment::cosine;
use crate::audio_encoder::EncoderVariant;
use crate::corpus::{Corpus, PhonemeInventory, SegmentBank};
use crate::error::{PaseError, Result};
use crate::frontend::{FrontendVariant, SpectrogramExtractor};
use crate::model::{segment_windows, PaseModel};
use crate::nn::init::seeded_rng;
use crate::trainer::{train, TrainConfig};

pub const FEATURE_FPS: u16 = 25;
/// Video frames of context on each side of the centre frame.
pub const CONTEXT_FRAMES: usize = 2;
pub const FEATURE_MAGIC: &[u8; 4] = b"PASE";
pub const FEATURE_VERSION: u16 = 1;
const FEATURE_HEADER_LEN: usize = 4 + 2 + 2 + 2 + 4;

const PURPOSE_RETRIEVAL: u64 = 0x5E7;

/// Per-video-frame embeddings for a downstream renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub fps: u16,
    /// `N × dim`.
    pub frames: Array2<f32>,
    pub source: String,
}

impl FeatureTrack {
    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    /// Magic, u16 version, u16 dim, u16 fps, u32 frame count, then row-major
    /// f32 values, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = u16::try_from(self.dim()).map_err(|_| PaseError::InconsistentHeader)?;
        let count = u32::try_from(self.len()).map_err(|_| PaseError::InconsistentHeader)?;
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + self.frames.len() * 4);
        out.extend(FEATURE_MAGIC);
        out.extend(FEATURE_VERSION.to_le_bytes());
        out.extend(dim.to_le_bytes());
        out.extend(self.fps.to_le_bytes());
        out.extend(count.to_le_bytes());
        for v in self.frames.iter() {
            out.extend(v.to_le_bytes());
        }
        Ok(out)
    }

    /// A payload that is a whole number of rows of some other width is an
    /// inconsistent header; any other shortfall is a truncated payload.
    pub fn from_bytes(buf: &[u8], source: &str) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != FEATURE_MAGIC {
            return Err(PaseError::BadMagic);
        }
        if buf.len() < FEATURE_HEADER_LEN {
            return Err(PaseError::TruncatedHeader);
        }
        let u16_at = |i: usize| u16::from_le_bytes([buf[i], buf[i + 1]]);
        let version = u16_at(4);
        if version != FEATURE_VERSION {
            return Err(PaseError::UnsupportedVersion(version as u32));
        }
        let dim = u16_at(6) as usize;
        let fps = u16_at(8);
        let count = u32::from_le_bytes(buf[10..14].try_into().expect("4 bytes")) as usize;
        let payload = &buf[FEATURE_HEADER_LEN..];
        let expected = dim * count * 4;
        if (dim == 0 && count > 0) || fps == 0 {
            return Err(PaseError::InconsistentHeader);
        }
        if payload.len() != expected {
            let whole_rows_elsewhere = count > 0 && payload.len() % (4 * count) == 0;
            return Err(if payload.len() < expected && !whole_rows_elsewhere {
                PaseError::TruncatedPayload
            } else {
                PaseError::InconsistentHeader
            });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let frames = Array2::from_shape_vec((count, dim), values).expect("length checked");
        Ok(Self {
            fps,
            frames,
            source: source.to_string(),
        })
    }
}

pub fn export_features(track: &FeatureTrack, path: &Path) -> Result<()> {
    fs::write(path, track.to_bytes()?)?;
    Ok(())
}

pub fn import_features(path: &Path) -> Result<FeatureTrack> {
    FeatureTrack::from_bytes(&fs::read(path)?, &path.display().to_string())
}

/// One row per video frame `t`, `N = ceil(duration · 25)`. Row `t` is the
/// pooled embedding of the audio in `[(t − 2.5)·P, (t + 2.5)·P)` samples,
/// `P` the frame period, zero outside the clip.
pub fn extract_features(
    audio: &[f32],
    model: &PaseModel<f32>,
    extractor: &SpectrogramExtractor,
    source: &str,
) -> Result<FeatureTrack> {
    let sr = extractor.config().sample_rate_hz as usize;
    let fps = FEATURE_FPS as usize;
    if sr % fps != 0 {
        return Err(PaseError::InvalidConfig(format!("sample rate {sr} Hz is not a multiple of {fps} fps")));
    }
    let period = sr / fps;
    if audio.len() < period {
        return Err(PaseError::AudioTooShort {
            samples: audio.len(),
            required: period,
        });
    }
    let n = (audio.len() * fps).div_ceil(sr);
    let context = (2 * CONTEXT_FRAMES + 1) * period;
    let lead = (2 * CONTEXT_FRAMES + 1) * period / 2;
    let mut frames = Array2::zeros((n, model.embed_dim()));
    let mut buf = vec![0.0f32; context];
    for t in 0..n {
        let start = (t * period) as i64 - lead as i64;
        for (j, b) in buf.iter_mut().enumerate() {
            let i = start + j as i64;
            *b = if i >= 0 && (i as usize) < audio.len() { audio[i as usize] } else { 0.0 };
        }
        let spec = extractor.compute(&buf)?.values.mapv(|v| v as f32);
        frames.row_mut(t).assign(&model.anchor(spec.view())?);
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(PaseError::InvalidSamples);
    }
    Ok(FeatureTrack {
        fps: FEATURE_FPS,
        frames,
        source: source.to_string(),
    })
}

/// What retrieval needs from an encoder: an anchor per segment, a visual
/// representation per segment, and a score between them.
pub trait RetrievalScorer {
    type Anchor;
    type Visual;

    fn anchor(&self, bank: &SegmentBank, segment: usize) -> Result<Self::Anchor>;
    fn visual(&self, bank: &SegmentBank, segment: usize) -> Result<Self::Visual>;
    fn score(&self, anchor: &Self::Anchor, phoneme_id: usize, visual: &Self::Visual) -> Result<f64>;
}

impl RetrievalScorer for PaseModel<f32> {
    type Anchor = Array1<f32>;
    type Visual = Array2<f32>;

    fn anchor(&self, bank: &SegmentBank, segment: usize) -> Result<Array1<f32>> {
        PaseModel::anchor(self, bank.segments[segment].spectrogram.view())
    }

    fn visual(&self, bank: &SegmentBank, segment: usize) -> Result<Array2<f32>> {
        self.visual_sequence(&segment_windows(bank, segment, self.config.window)?)
    }

    /// `cos(A_p, F_fusion)`.
    fn score(&self, anchor: &Array1<f32>, phoneme_id: usize, visual: &Array2<f32>) -> Result<f64> {
        let fusion = self.fuse(anchor.view(), phoneme_id, visual.view())?;
        Ok(cosine(anchor.view(), fusion.view())? as f64)
    }
}

/// Fraction of segments in `pool` whose own visual sequence scores strictly
/// above `k` distractors drawn from other viseme classes of the same pool.
pub fn retrieval_accuracy<S: RetrievalScorer>(scorer: &S, bank: &SegmentBank, pool: &[usize], k: usize, seed: u64) -> Result<f64> {
    if pool.is_empty() {
        return Err(PaseError::Corpus("empty evaluation pool".into()));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
    for &s in pool {
        by_class.entry(bank.segments[s].viseme_class).or_default().push(s);
    }
    let mut visual_cache: HashMap<usize, S::Visual> = HashMap::new();
    let mut correct = 0usize;
    for (i, &s) in pool.iter().enumerate() {
        let class = bank.segments[s].viseme_class;
        let others: Vec<usize> = pool.iter().copied().filter(|&o| bank.segments[o].viseme_class != class).collect();
        if others.len() < k {
            return Err(PaseError::InsufficientDistractors(format!(
                "segment {s} has {} candidates from other viseme classes, {k} required",
                others.len()
            )));
        }
        let mut rng = seeded_rng(seed, PURPOSE_RETRIEVAL, i as u64);
        let distractors: Vec<usize> = index::sample(&mut rng, others.len(), k).into_iter().map(|j| others[j]).collect();
        let anchor = scorer.anchor(bank, s)?;
        let pid = bank.segments[s].phoneme_id;
        let mut score_of = |seg: usize| -> Result<f64> {
            if !visual_cache.contains_key(&seg) {
                let v = scorer.visual(bank, seg)?;
                visual_cache.insert(seg, v);
            }
            scorer.score(&anchor, pid, &visual_cache[&seg])
        };
        let own = score_of(s)?;
        let mut best_other = f64::NEG_INFINITY;
        for d in distractors {
            best_other = best_other.max(score_of(d)?);
        }
        if own > best_other {
            correct += 1;
        }
    }
    Ok(correct as f64 / pool.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub first: String,
    pub second: String,
    pub same_viseme: bool,
    pub similarity: f64,
    /// Embedding pairs averaged.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub pairs: Vec<PairSimilarity>,
    /// Mean over pairs of distinct phonemes sharing a viseme class.
    pub same_viseme_mean: Option<f64>,
    /// Mean over pairs of phonemes in different viseme classes.
    pub cross_viseme_mean: Option<f64>,
}

impl AmbiguityReport {
    pub fn gap(&self) -> Option<f64> {
        Some(self.same_viseme_mean? - self.cross_viseme_mean?)
    }

    pub fn pair(&self, first: &str, second: &str) -> Option<&PairSimilarity> {
        self.pairs
            .iter()
            .find(|p| (p.first == first && p.second == second) || (p.first == second && p.second == first))
    }
}

/// Every unordered pair of inventory ids, self pairs included.
pub fn all_pairs(inventory: &PhonemeInventory) -> Vec<(usize, usize)> {
    let n = inventory.len();
    (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect()
}

/// Pairs of [`all_pairs`] that `pool` can measure: both phonemes present, and
/// at least two segments for a self pair.
pub fn measurable_pairs(bank: &SegmentBank, pool: &[usize]) -> Vec<(usize, usize)> {
    let mut counts = vec![0usize; bank.inventory.len()];
    for &s in pool {
        counts[bank.segments[s].phoneme_id] += 1;
    }
    all_pairs(&bank.inventory)
        .into_iter()
        .filter(|&(a, b)| if a == b { counts[a] >= 2 } else { counts[a] > 0 && counts[b] > 0 })
        .collect()
}

/// Mean cosine between pooled audio embeddings of the two phonemes of each
/// pair, over all segment pairs in `pool`. A self pair counts each unordered
/// pair of distinct segments once.
pub fn ambiguity_report(
    model: &PaseModel<f32>,
    bank: &SegmentBank,
    pool: &[usize],
    pairs: &[(usize, usize)],
) -> Result<AmbiguityReport> {
    let inv = &bank.inventory;
    let mut by_phoneme: HashMap<usize, Vec<usize>> = HashMap::new();
    for &s in pool {
        by_phoneme.entry(bank.segments[s].phoneme_id).or_default().push(s);
    }
    let mut absent: Vec<usize> = pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .filter(|p| !by_phoneme.contains_key(p))
        .collect();
    absent.sort_unstable();
    absent.dedup();
    if !absent.is_empty() {
        let names: Vec<String> = absent
            .iter()
            .map(|&p| if p < inv.len() { inv.label(p).to_string() } else { format!("#{p}") })
            .collect();
        return Err(PaseError::PhonemeAbsent(names.join(", ")));
    }
    let mut anchors: HashMap<usize, Array1<f32>> = HashMap::new();
    for &s in pool {
        anchors.insert(s, model.anchor(bank.segments[s].spectrogram.view())?);
    }
    let mut out = Vec::with_capacity(pairs.len());
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for &(a, b) in pairs {
        let (mut sum, mut count) = (0.0, 0usize);
        for &x in &by_phoneme[&a] {
            for &y in &by_phoneme[&b] {
                if a == b && y <= x {
                    continue;
                }
                sum += cosine(anchors[&x].view(), anchors[&y].view())? as f64;
                count += 1;
            }
        }
        if count == 0 {
            return Err(PaseError::Corpus(format!(
                "phoneme {} needs two segments for a self pair",
                inv.label(a)
            )));
        }
        let similarity = sum / count as f64;
        let same_viseme = inv.same_viseme(a, b);
        if a != b {
            if same_viseme { &mut same } else { &mut cross }.push(similarity);
        }
        out.push(PairSimilarity {
            first: inv.label(a).to_string(),
            second: inv.label(b).to_string(),
            same_viseme,
            similarity,
            count,
        });
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(AmbiguityReport {
        pairs: out,
        same_viseme_mean: mean(&same),
        cross_viseme_mean: mean(&cross),
    })
}

/// Two-component PCA of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `n × 2`.
    pub points: Array2<f64>,
    /// `2 × D`, unit rows.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    /// Covariance eigenvalues of the two components.
    pub explained: [f64; 2],
}

/// Eigenvectors of the sample covariance with the two largest eigenvalues.
/// Each component is flipped so its largest-magnitude loading is positive.
pub fn project_embeddings(embeddings: ArrayView2<f64>) -> Result<Projection> {
    let (n, d) = embeddings.dim();
    if n < 3 {
        return Err(PaseError::InvalidConfig(format!("projection needs at least 3 embeddings, got {n}")));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(PaseError::InvalidSamples);
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("non-empty");
    let centred = &embeddings - &mean;
    let x = DMatrix::from_row_iterator(n, d, centred.iter().copied());
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Array2::zeros((2, d));
    let mut explained = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[c, i]] = sign * v[i];
        }
        explained[c] = eig.eigenvalues[k].max(0.0);
    }
    if d == 1 {
        components.row_mut(1).fill(0.0);
    }
    let points = centred.dot(&components.t());
    Ok(Projection {
        points,
        components,
        mean,
        explained,
    })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot of projected points, one colour per distinct label.
pub fn projection_svg(points: ArrayView2<f64>, labels: &[String]) -> Result<String> {
    if points.ncols() != 2 || labels.len() != points.nrows() {
        return Err(PaseError::DimensionMismatch(format!(
            "{} labels for {} points of width {}",
            labels.len(),
            points.nrows(),
            points.ncols()
        )));
    }
    let (size, margin) = (480.0, 40.0);
    let extent = points.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let to_px = |v: f64, flip: bool| {
        let u = if flip { -v } else { v };
        size / 2.0 + u / extent * (size / 2.0 - margin)
    };
    let mut distinct: Vec<&String> = Vec::new();
    for l in labels {
        if !distinct.contains(&l) {
            distinct.push(l);
        }
    }
    let colour = |l: &String| PALETTE[distinct.iter().position(|d| *d == l).expect("collected") % PALETTE.len()];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" viewBox="0 0 {size} {}">"#,
        size + 20.0 * distinct.len() as f64,
        size + 20.0 * distinct.len() as f64
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<line x1="{margin}" y1="{c}" x2="{e}" y2="{c}" stroke="#cccccc"/><line x1="{c}" y1="{margin}" x2="{c}" y2="{e}" stroke="#cccccc"/>"##,
        c = size / 2.0,
        e = size - margin
    );
    for (p, l) in points.rows().into_iter().zip(labels) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="{}"><title>{}</title></circle>"#,
            to_px(p[0], false),
            to_px(p[1], true),
            colour(l),
            escape_xml(l)
        );
    }
    for (i, l) in distinct.iter().enumerate() {
        let y = size + 14.0 + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{margin}" cy="{}" r="5" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            y - 4.0,
            colour(l),
            margin + 12.0,
            y,
            escape_xml(l)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Pooled audio embeddings of `pool`, labelled by phoneme.
pub fn pooled_embeddings(model: &PaseModel<f32>, bank: &SegmentBank, pool: &[usize]) -> Result<(Array2<f64>, Vec<String>)> {
    let mut out = Array2::zeros((pool.len(), model.embed_dim()));
    let mut labels = Vec::with_capacity(pool.len());
    for (i, &s) in pool.iter().enumerate() {
        let seg = &bank.segments[s];
        out.row_mut(i).assign(&model.anchor(seg.spectrogram.view())?.mapv(f64::from));
        labels.push(bank.inventory.label(seg.phoneme_id).to_string());
    }
    Ok((out, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub segments: usize,
    pub negatives: usize,
    pub retrieval_accuracy: f64,
    pub ambiguity: AmbiguityReport,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Evaluated {} held-out segments.", self.segments);
        let _ = writeln!(
            s,
            "Retrieval accuracy against {} distractors: {:.4} (chance {:.4})",
            self.negatives,
            self.retrieval_accuracy,
            1.0 / (self.negatives as f64 + 1.0)
        );
        let _ = writeln!(s, "Phoneme pair similarity (pooled audio embeddings):");
        for p in &self.ambiguity.pairs {
            let _ = writeln!(
                s,
                "  {:>4} {:>4}  {:+.4}  {}",
                p.first,
                p.second,
                p.similarity,
                if p.first == p.second {
                    "self"
                } else if p.same_viseme {
                    "same viseme"
                } else {
                    "cross viseme"
                }
            );
        }
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:+.4}"));
        let _ = writeln!(s, "Same-viseme mean:  {}", fmt(self.ambiguity.same_viseme_mean));
        let _ = writeln!(s, "Cross-viseme mean: {}", fmt(self.ambiguity.cross_viseme_mean));
        let _ = writeln!(s, "Gap:               {}", fmt(self.ambiguity.gap()));
        s
    }

    /// One `key=value` record per line.
    pub fn records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "segments={}", self.segments);
        let _ = writeln!(s, "negatives={}", self.negatives);
        let _ = writeln!(s, "retrieval_accuracy={:.6}", self.retrieval_accuracy);
        for p in &self.ambiguity.pairs {
            let _ = writeln!(s, "pair_similarity.{}.{}={:.6}", p.first, p.second, p.similarity);
        }
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "same_viseme_mean={}", opt(self.ambiguity.same_viseme_mean));
        let _ = writeln!(s, "cross_viseme_mean={}", opt(self.ambiguity.cross_viseme_mean));
        let _ = writeln!(s, "viseme_gap={}", opt(self.ambiguity.gap()));
        s
    }
}

/// Retrieval plus all-pairs similarity on `pool`.
pub fn evaluate(model: &PaseModel<f32>, bank: &SegmentBank, pool: &[usize], negatives: usize, seed: u64) -> Result<EvalReport> {
    Ok(EvalReport {
        segments: pool.len(),
        negatives,
        retrieval_accuracy: retrieval_accuracy(model, bank, pool, negatives, seed)?,
        ambiguity: ambiguity_report(model, bank, pool, &measurable_pairs(bank, pool))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub frontend: FrontendVariant,
    pub encoder: EncoderVariant,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub retrieval_accuracy: f64,
    pub viseme_gap: Option<f64>,
}

impl AblationCell {
    pub fn record(&self) -> String {
        format!(
            "frontend={:?} encoder={:?} initial_loss={:.6} final_loss={:.6} retrieval_accuracy={:.4} viseme_gap={}",
            self.frontend,
            self.encoder,
            self.initial_loss,
            self.final_loss,
            self.retrieval_accuracy,
            self.viseme_gap.map_or("nan".to_string(), |g| format!("{g:.4}"))
        )
        .to_lowercase()
    }
}

pub const ABLATION_GRID: [(FrontendVariant, EncoderVariant); 4] = [
    (FrontendVariant::Stft, EncoderVariant::Gru),
    (FrontendVariant::Stft, EncoderVariant::Cnn),
    (FrontendVariant::Mel, EncoderVariant::Gru),
    (FrontendVariant::Mel, EncoderVariant::Cnn),
];

/// Trains and evaluates `base` under every front-end × encoder combination.
pub fn run_ablation(
    base: &TrainConfig,
    corpus: &Corpus,
    negatives: usize,
    mut on_cell: impl FnMut(&AblationCell),
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(ABLATION_GRID.len());
    for (frontend, encoder) in ABLATION_GRID {
        let mut cfg = base.clone();
        cfg.frontend.variant = frontend;
        cfg.model.encoder_variant = encoder;
        let outcome = train(&cfg, corpus, None)?;
        let t = &outcome.trainer;
        let report = evaluate(&t.model, &t.bank, &t.eval_pool, negatives, cfg.seed)?;
        let cell = AblationCell {
            frontend,
            encoder,
            initial_loss: outcome.metrics.first().map_or(f64::NAN, |m| m.total),
            final_loss: outcome.metrics.last().map_or(f64::NAN, |m| m.total),
            retrieval_accuracy: report.retrieval_accuracy,
            viseme_gap: report.ambiguity.gap(),
        };
        on_cell(&cell);
        cells.push(cell);
    }
    Ok(cells)
}

/// Cosine between two plain vectors, used for reports on exported tracks.
pub fn track_similarity(a: ArrayView1<f32>, b: ArrayView1<f32>) -> Result<f64> {
    Ok(cosine(a, b)? as f64)
}
