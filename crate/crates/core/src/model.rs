//! The full model: audio and visual encoders, phoneme table, cross-attention
//! and reconstruction heads, with the batch objective and its gradient.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::alignment::{
    build_query, contrastive_from_similarities, contrastive_similarity_grad, cosine, cosine_backward, total_loss,
    AttentionTrace, ContrastiveConfig, CrossAttention, PhonemeEmbeddingTable,
};
use crate::audio_encoder::{pool, pool_backward, AudioCnn, AudioCnnConfig, AudioEncoder, AudioTrace, EncoderVariant, GruStack, Pooling};
use crate::corpus::{build_window_sized, AlignmentBatch, SegmentBank};
use crate::error::{PaseError, Result};
use crate::nn::init::seeded_rng;
use crate::nn::params::join;
use crate::nn::{ParamView, ParamViewMut, Parameters, ReluPattern};
use crate::real::Real;
use crate::robustness::{apply_mask, apply_mask_backward, reconstruct, reconstruction_loss, reconstruction_loss_grad, MaskPlan, Robustness};
use crate::visual_encoder::{scaled_stack, shape_chain, VisualEncoder, VisualTrace, FULL_EMBED_DIM, INPUT_SIZE};

const PURPOSE_INIT: u64 = 0x1417;
pub const PURPOSE_MASK_AUDIO: u64 = 0xA0D1;
pub const PURPOSE_MASK_VISUAL: u64 = 0x5150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared embedding width. Visual channel counts scale with it.
    pub embed_dim: usize,
    pub gru_layers: usize,
    pub pooling: Pooling,
    pub heads: usize,
    pub encoder_variant: EncoderVariant,
    pub audio_cnn: AudioCnnConfig,
    /// Frames per lip window (odd). Owned by the training configuration.
    #[serde(skip)]
    pub window: usize,
    /// Side of the square lip crop fed to the visual encoder.
    pub crop_size: usize,
}

/// Lip crop side used by [`ModelConfig::desk`].
pub const DESK_CROP: usize = 72;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: FULL_EMBED_DIM,
            gru_layers: 8,
            pooling: Pooling::Last,
            heads: 1,
            encoder_variant: EncoderVariant::Gru,
            audio_cnn: AudioCnnConfig::default(),
            window: 5,
            crop_size: INPUT_SIZE,
        }
    }
}

impl ModelConfig {
    /// Narrow model sized for CPU training on the synthetic corpus.
    /// Lip crops are 72 pixels; the stack still reduces them to 1x1.
    pub fn desk() -> Self {
        Self {
            embed_dim: 16,
            crop_size: DESK_CROP,
            ..Self::default()
        }
    }

    /// Audio sequence length the encoder emits for `frames` spectrogram
    /// frames; masks are drawn over these steps.
    pub fn audio_steps(&self, frames: usize) -> usize {
        match self.encoder_variant {
            EncoderVariant::Gru => frames,
            EncoderVariant::Cnn => self.audio_cnn.output_steps(frames).unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PaseError::InvalidConfig(m));
        if self.embed_dim == 0 || self.gru_layers == 0 {
            return bad("embed_dim and gru_layers must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("{} heads do not divide embed_dim {}", self.heads, self.embed_dim));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return bad(format!("window must be odd, got {}", self.window));
        }
        if self.encoder_variant == EncoderVariant::Cnn {
            self.audio_cnn.validate()?;
        }
        if shape_chain(&self.visual_stack(), (self.crop_size, self.crop_size))
            .ok()
            .and_then(|c| c.last().copied())
            != Some((1, 1))
        {
            return bad(format!("crop size {} does not reduce to 1×1", self.crop_size));
        }
        Ok(())
    }

    pub fn visual_stack(&self) -> Vec<crate::visual_encoder::ConvLayerSpec> {
        let mut stack = scaled_stack(self.embed_dim);
        stack[0].in_ch = 3 * self.window;
        stack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaseModel<R> {
    pub config: ModelConfig,
    pub audio: AudioEncoder<R>,
    pub visual: VisualEncoder<R>,
    pub phonemes: PhonemeEmbeddingTable<R>,
    pub attention: CrossAttention<R>,
    pub robustness: Robustness<R>,
}

impl<R: Real> PaseModel<R> {
    /// Random initialisation, fully determined by `seed`.
    pub fn new(config: &ModelConfig, input_dim: usize, phonemes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let rng = |i| seeded_rng(seed, PURPOSE_INIT, i);
        let audio = match config.encoder_variant {
            EncoderVariant::Gru => AudioEncoder::Gru(GruStack::deep(input_dim, e, config.gru_layers, &mut rng(0))),
            EncoderVariant::Cnn => AudioEncoder::Cnn(AudioCnn::he_uniform(input_dim, e, &config.audio_cnn, &mut rng(0))),
        };
        Ok(Self {
            config: config.clone(),
            audio,
            visual: VisualEncoder::he_uniform(config.visual_stack(), &mut rng(1)),
            phonemes: PhonemeEmbeddingTable::uniform(phonemes, e, 1.0 / (e as f64).sqrt(), &mut rng(2)),
            attention: CrossAttention::uniform(e, config.heads, &mut rng(3)),
            robustness: Robustness::uniform(e, &mut rng(4)),
        })
    }

    pub fn zeros(config: &ModelConfig, input_dim: usize, phonemes: usize) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let audio = match config.encoder_variant {
            EncoderVariant::Gru => AudioEncoder::Gru(GruStack::zeros(input_dim, e, config.gru_layers)),
            EncoderVariant::Cnn => AudioEncoder::Cnn(AudioCnn::zeros(input_dim, e, &config.audio_cnn)),
        };
        Ok(Self {
            config: config.clone(),
            audio,
            visual: VisualEncoder::zeros(config.visual_stack()),
            phonemes: PhonemeEmbeddingTable::zeros(phonemes, e),
            attention: CrossAttention::zeros(e, config.heads),
            robustness: Robustness::zeros(e),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.audio.input_dim()
    }

    pub fn pooling(&self) -> Pooling {
        match self.config.encoder_variant {
            EncoderVariant::Gru => self.config.pooling,
            EncoderVariant::Cnn => Pooling::Mean,
        }
    }

    /// Pooled audio embedding of one spectrogram.
    pub fn anchor(&self, spec: ndarray::ArrayView2<R>) -> Result<Array1<R>> {
        let (seq, _) = self.audio.forward(spec)?;
        Ok(pool(seq.view(), self.pooling()))
    }

    /// Visual sequence of a segment (`T_v × E`).
    pub fn visual_sequence(&self, windows: &[Array3<R>]) -> Result<Array2<R>> {
        if windows.is_empty() {
            return Err(PaseError::EmptySequence);
        }
        let mut out = Array2::zeros((windows.len(), self.embed_dim()));
        for (i, w) in windows.iter().enumerate() {
            out.row_mut(i).assign(&self.visual.forward(w.view())?.0);
        }
        Ok(out)
    }

    /// Fusion of the query built from `a_p` with a visual sequence.
    pub fn fuse(&self, a_p: ndarray::ArrayView1<R>, phoneme_id: usize, visual: ndarray::ArrayView2<R>) -> Result<Array1<R>> {
        let q = build_query(a_p, phoneme_id, &self.phonemes)?;
        Ok(self.attention.forward(q.view(), visual)?.0)
    }

    pub fn loss(&self, data: &BatchData<R>, cfg: &ContrastiveConfig) -> Result<LossBreakdown> {
        self.run(data, cfg, None, None)
    }

    /// Objective plus the fingerprint of every ReLU sign it passed through.
    pub fn loss_with_pattern(&self, data: &BatchData<R>, cfg: &ContrastiveConfig) -> Result<(LossBreakdown, u64)> {
        let mut pattern = ReluPattern::default();
        let loss = self.run(data, cfg, None, Some(&mut pattern))?;
        Ok((loss, pattern.finish()))
    }

    /// Batch objective and its gradient (a value shaped like `self`).
    pub fn loss_and_grad(&self, data: &BatchData<R>, cfg: &ContrastiveConfig) -> Result<(LossBreakdown, Self)> {
        let mut grad = self.zeros_like();
        let loss = self.run(data, cfg, Some(&mut grad), None)?;
        Ok((loss, grad))
    }

    fn run(
        &self,
        data: &BatchData<R>,
        cfg: &ContrastiveConfig,
        mut grad: Option<&mut Self>,
        mut pattern: Option<&mut ReluPattern>,
    ) -> Result<LossBreakdown> {
        cfg.validate()?;
        data.check()?;
        let b = data.spectrograms.len();
        let inv_b = R::of(1.0 / b as f64);
        let tau = R::of(cfg.tau);
        let alpha = R::of(cfg.alpha);
        let want = grad.is_some();

        let mut vis_seqs = Vec::with_capacity(data.visual.len());
        let mut vis_traces: Vec<Vec<VisualTrace<R>>> = Vec::with_capacity(data.visual.len());
        for windows in &data.visual {
            let mut seq = Array2::zeros((windows.len(), self.embed_dim()));
            let mut traces = Vec::new();
            for (i, w) in windows.iter().enumerate() {
                let (e, t) = self.visual.forward(w.view())?;
                seq.row_mut(i).assign(&e);
                if let Some(p) = pattern.as_deref_mut() {
                    t.fold_relu_pattern(p);
                }
                if want {
                    traces.push(t);
                }
            }
            vis_seqs.push(seq);
            vis_traces.push(traces);
        }
        let mut d_vis: Vec<Array2<R>> = vis_seqs.iter().map(|s| Array2::zeros(s.raw_dim())).collect();

        let (mut sum_con, mut sum_rec, mut sum_total) = (0.0, 0.0, 0.0);
        let pooling = self.pooling();
        for i in 0..b {
            let spec = &data.spectrograms[i];
            let pid = data.phoneme_ids[i];
            let (a_seq, a_trace): (Array2<R>, AudioTrace<R>) = self.audio.forward(spec.view())?;
            if let Some(p) = pattern.as_deref_mut() {
                a_trace.fold_relu_pattern(p);
            }
            let a_p = pool(a_seq.view(), pooling);
            let q = build_query(a_p.view(), pid, &self.phonemes)?;

            let candidates: Vec<usize> = std::iter::once(data.positive[i]).chain(data.negatives[i].iter().copied()).collect();
            let mut fusions: Vec<(Array1<R>, AttentionTrace<R>)> = Vec::with_capacity(candidates.len());
            let mut sims = Vec::with_capacity(candidates.len());
            for &c in &candidates {
                let (f, t) = self.attention.forward(q.view(), vis_seqs[c].view())?;
                sims.push(cosine(a_p.view(), f.view())?);
                fusions.push((f, t));
            }
            let l_con = contrastive_from_similarities(sims[0], &sims[1..], tau);

            let pos = data.positive[i];
            let v = &vis_seqs[pos];
            let a_masked = apply_mask(a_seq.view(), &data.audio_masks[i], self.robustness.audio_fill.view())?;
            let v_masked = apply_mask(v.view(), &data.visual_masks[i], self.robustness.visual_fill.view())?;
            let a_rec = reconstruct(a_masked.view(), &self.robustness.audio_head);
            let v_rec = reconstruct(v_masked.view(), &self.robustness.visual_head);
            let l_rec = reconstruction_loss(v_rec.view(), v.view(), a_rec.view(), a_seq.view())?;
            let l_total = total_loss(l_con, l_rec, cfg);
            sum_con += l_con.f64();
            sum_rec += l_rec.f64();
            sum_total += l_total.f64();

            let Some(g) = grad.as_deref_mut() else { continue };
            let (d_pos, d_negs) = contrastive_similarity_grad(sims[0], &sims[1..], tau);
            let mut d_ap = Array1::<R>::zeros(a_p.len());
            let mut d_q = Array1::<R>::zeros(q.len());
            for (j, (&c, (f, trace))) in candidates.iter().zip(&fusions).enumerate() {
                let ds = if j == 0 { d_pos } else { d_negs[j - 1] } * inv_b;
                let (da, df) = cosine_backward(a_p.view(), f.view(), ds)?;
                d_ap += &da;
                let (dq, dkv) = self.attention.backward(q.view(), vis_seqs[c].view(), trace, df.view(), &mut g.attention);
                d_q += &dq;
                d_vis[c] += &dkv;
            }
            d_ap += &d_q;
            let mut row = g.phonemes.table.row_mut(pid);
            row += &d_q;

            let (dv_rec, da_rec) = reconstruction_loss_grad(v_rec.view(), v.view(), a_rec.view(), a_seq.view());
            let (dv_rec, da_rec) = (dv_rec * (alpha * inv_b), da_rec * (alpha * inv_b));
            let dv_masked = self.robustness.visual_head.backward_rows(v_masked.view(), dv_rec.view(), &mut g.robustness.visual_head);
            let da_masked = self.robustness.audio_head.backward_rows(a_masked.view(), da_rec.view(), &mut g.robustness.audio_head);
            let (dv_in, dv_fill) = apply_mask_backward(dv_masked.view(), &data.visual_masks[i]);
            let (da_in, da_fill) = apply_mask_backward(da_masked.view(), &data.audio_masks[i]);
            g.robustness.visual_fill += &dv_fill;
            g.robustness.audio_fill += &da_fill;
            d_vis[pos] += &(dv_in - &dv_rec);

            let d_seq = pool_backward(d_ap.view(), a_seq.nrows(), pooling) + da_in - &da_rec;
            self.audio.backward(&a_trace, d_seq, &mut g.audio);
        }

        if let Some(g) = grad {
            for (traces, d) in vis_traces.iter().zip(&d_vis) {
                for (t, row) in traces.iter().zip(d.rows()) {
                    if row.iter().all(|&x| x == R::zero()) {
                        continue;
                    }
                    self.visual.backward(t, row.to_owned(), &mut g.visual);
                }
            }
        }
        let n = b as f64;
        Ok(LossBreakdown {
            total: sum_total / n,
            contrastive: sum_con / n,
            reconstruction: sum_rec / n,
        })
    }
}

impl<R: Real> Parameters<R> for PaseModel<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        self.audio.params(&join(prefix, "audio"), out);
        self.visual.params(&join(prefix, "visual"), out);
        self.phonemes.params(&join(prefix, "phoneme"), out);
        self.attention.params(&join(prefix, "attention"), out);
        self.robustness.params(&join(prefix, "robustness"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        self.audio.params_mut(&join(prefix, "audio"), out);
        self.visual.params_mut(&join(prefix, "visual"), out);
        self.phonemes.params_mut(&join(prefix, "phoneme"), out);
        self.attention.params_mut(&join(prefix, "attention"), out);
        self.robustness.params_mut(&join(prefix, "robustness"), out);
    }
}

/// Batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrastive: f64,
    pub reconstruction: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.contrastive.is_finite() && self.reconstruction.is_finite()
    }
}

/// Intensity subtracted from lip pixels before the visual encoder, so its
/// input is centred on zero rather than carrying a large constant offset.
pub const PIXEL_CENTRE: f64 = 0.5;

/// Lip-window tensors of every frame of a segment, pixels shifted by
/// [`PIXEL_CENTRE`].
pub fn segment_windows<R: Real>(bank: &SegmentBank, segment: usize, window: usize) -> Result<Vec<Array3<R>>> {
    let seg = bank
        .segments
        .get(segment)
        .ok_or_else(|| PaseError::Corpus(format!("segment {segment} out of range")))?;
    let crops = bank.clip_crops(seg.clip);
    seg.frame_indices
        .iter()
        .map(|&f| build_window_sized(crops, f, window).map(|w| w.pixels.mapv(|v| R::of(v as f64 - PIXEL_CENTRE))))
        .collect()
}

/// Everything one objective evaluation reads, with masks already drawn.
#[derive(Debug, Clone)]
pub struct BatchData<R> {
    pub spectrograms: Vec<Array2<R>>,
    pub phoneme_ids: Vec<usize>,
    /// Window tensors of each distinct visual segment.
    pub visual: Vec<Vec<Array3<R>>>,
    /// Index into `visual` of each anchor's own sequence.
    pub positive: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
    pub audio_masks: Vec<MaskPlan>,
    pub visual_masks: Vec<MaskPlan>,
}

impl<R: Real> BatchData<R> {
    /// Gathers inputs for `batch`. Audio and visual masks come from separate
    /// seeded streams keyed by `(mask_seed, anchor)`.
    pub fn gather(bank: &SegmentBank, batch: &AlignmentBatch, model: &ModelConfig, mask_ratio: f64, mask_seed: u64) -> Result<Self> {
        let window = model.window;
        if batch.is_empty() {
            return Err(PaseError::Corpus("empty batch".into()));
        }
        let segs = batch.visual_segments();
        let slot = |s: usize| segs.iter().position(|&x| x == s).expect("listed by visual_segments");
        let mut visual = Vec::with_capacity(segs.len());
        for &s in &segs {
            visual.push(segment_windows(bank, s, window)?);
        }
        let mut spectrograms = Vec::with_capacity(batch.len());
        let mut audio_masks = Vec::with_capacity(batch.len());
        let mut visual_masks = Vec::with_capacity(batch.len());
        for (i, &a) in batch.anchors.iter().enumerate() {
            let seg = &bank.segments[a];
            spectrograms.push(seg.spectrogram.mapv(|v| R::of(v as f64)));
            let mut ra = seeded_rng(mask_seed, PURPOSE_MASK_AUDIO, i as u64);
            let mut rv = seeded_rng(mask_seed, PURPOSE_MASK_VISUAL, i as u64);
            audio_masks.push(MaskPlan::sample(model.audio_steps(seg.spectrogram.nrows()), mask_ratio, &mut ra));
            visual_masks.push(MaskPlan::sample(seg.frame_indices.len(), mask_ratio, &mut rv));
        }
        Ok(Self {
            spectrograms,
            phoneme_ids: batch.phoneme_ids.clone(),
            positive: batch.anchors.iter().map(|&a| slot(a)).collect(),
            negatives: batch.negatives.iter().map(|n| n.iter().map(|&s| slot(s)).collect()).collect(),
            visual,
            audio_masks,
            visual_masks,
        })
    }

    fn check(&self) -> Result<()> {
        let b = self.spectrograms.len();
        if b == 0 {
            return Err(PaseError::Corpus("empty batch".into()));
        }
        if [self.phoneme_ids.len(), self.positive.len(), self.negatives.len(), self.audio_masks.len(), self.visual_masks.len()]
            .iter()
            .any(|&n| n != b)
        {
            return Err(PaseError::DimensionMismatch("batch fields differ in length".into()));
        }
        let nv = self.visual.len();
        if self.positive.iter().chain(self.negatives.iter().flatten()).any(|&s| s >= nv) {
            return Err(PaseError::DimensionMismatch("visual index out of range".into()));
        }
        Ok(())
    }
}
