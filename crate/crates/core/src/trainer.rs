//! Optimisation loop, Adam, binary checkpoints and gradient verification.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::ContrastiveConfig;
use crate::corpus::{sample_batch, AlignmentBatch, Corpus, NegativePolicy, PhonemeInventory, SegmentBank};
use crate::error::{PaseError, Result};
use crate::frontend::FrontendConfig;
use crate::model::{BatchData, LossBreakdown, ModelConfig, PaseModel};
use crate::nn::gradcheck::{check_gradients_piecewise, GradCheckOptions, GradCheckReport};
use crate::nn::init::mix_seed;
use crate::nn::Parameters;
use crate::real::Real;

const SALT_BATCH: u64 = 0xB47C;
const SALT_MASK: u64 = 0x3A5C;
const SALT_PROBE: u64 = 0x960B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frames per lip window.
    pub window: usize,
    pub steps: u64,
    pub mask_ratio: f64,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
    pub negatives_per_anchor: usize,
    pub negative_policy: NegativePolicy,
    /// Fraction of clips (the last ones) kept out of training.
    pub holdout_fraction: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm ceiling; off when absent.
    pub grad_clip: Option<f64>,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 16,
            window: 5,
            steps: 200,
            mask_ratio: 0.15,
            tau: 0.07,
            alpha: 1.0,
            seed: 0,
            negatives_per_anchor: 4,
            negative_policy: NegativePolicy::InBatch,
            holdout_fraction: 0.2,
            checkpoint_every: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip: None,
            frontend: FrontendConfig::default(),
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PaseError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        self.contrastive().validate()?;
        self.frontend.validate()?;
        self.model_config().validate()
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            alpha: self.alpha,
            ..ContrastiveConfig::default()
        }
    }

    /// Model configuration with the window taken from this config.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            window: self.window,
            ..self.model.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PaseError::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PaseError::InvalidConfig(e.to_string()))
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<M> {
    pub m: M,
    pub v: M,
    pub t: u64,
}

impl<M: Clone> AdamState<M> {
    pub fn new<R: Real>(params: &M) -> Self
    where
        M: Parameters<R>,
    {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn update<R: Real>(&mut self, params: &mut M, grad: &M, lr: f64, beta1: f64, beta2: f64, eps: f64)
    where
        M: Parameters<R>,
    {
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (R::of(beta1), R::of(beta2));
        let (one_b1, one_b2) = (R::of(1.0 - beta1), R::of(1.0 - beta2));
        let step = R::of(lr / c1);
        let c2 = R::of(c2);
        let eps = R::of(eps);
        let g = grad.collect_params();
        let m = self.m.collect_params_mut();
        let v = self.v.collect_params_mut();
        for (((p, g), m), v) in params.collect_params_mut().into_iter().zip(g).zip(m).zip(v) {
            for (((p, &g), m), v) in p.data.iter_mut().zip(g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step * *m / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub total: f64,
    pub contrastive: f64,
    pub reconstruction: f64,
}

impl StepMetrics {
    fn new(step: u64, l: LossBreakdown) -> Self {
        Self {
            step,
            total: l.total,
            contrastive: l.contrastive,
            reconstruction: l.reconstruction,
        }
    }

    pub fn to_record(&self) -> String {
        format!(
            "step={} total={:.9} contrastive={:.9} reconstruction={:.9}",
            self.step, self.total, self.contrastive, self.reconstruction
        )
    }
}

fn global_norm<R: Real, M: Parameters<R>>(m: &M) -> f64 {
    m.collect_params()
        .iter()
        .flat_map(|p| p.data.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

/// One optimisation step on prepared batch data. On a non-finite loss or
/// gradient the model and optimiser are left untouched.
pub fn train_step(
    model: &mut PaseModel<f32>,
    optimizer: &mut AdamState<PaseModel<f32>>,
    data: &BatchData<f32>,
    config: &TrainConfig,
    step: u64,
) -> Result<StepMetrics> {
    let diverged = || PaseError::Divergence {
        step,
        last_checkpoint: None,
    };
    let (loss, mut grad) = match model.loss_and_grad(data, &config.contrastive()) {
        Ok(v) => v,
        Err(PaseError::ZeroNorm) => return Err(diverged()),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() || !grad.all_finite() {
        return Err(diverged());
    }
    if let Some(clip) = config.grad_clip {
        let n = global_norm(&grad);
        if n > clip {
            grad.scale((clip / n) as f32);
        }
    }
    optimizer.update(model, &grad, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
    Ok(StepMetrics::new(step, loss))
}

/// Everything needed to continue or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: TrainConfig,
    pub inventory: PhonemeInventory,
    pub model: PaseModel<f32>,
    pub optimizer: AdamState<PaseModel<f32>>,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PASECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PaseError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PaseError::Checkpoint("invalid UTF-8".into()))
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_tensors(out: &mut Vec<u8>, prefix: &str, m: &PaseModel<f32>) {
    for p in m.collect_params() {
        let name = format!("{prefix}{}", p.name);
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in p.data {
            out.extend(v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    fn tensor_sets(&self) -> [(&'static str, &PaseModel<f32>); 3] {
        [("model.", &self.model), ("adam.m.", &self.optimizer.m), ("adam.v.", &self.optimizer.v)]
    }

    /// Layout (little-endian): magic, u32 version, u64 step, u64 optimiser
    /// step, u32-prefixed config TOML, u32-prefixed inventory TSV, u32 audio
    /// input width, u32 tensor count, then per tensor a u16-prefixed name,
    /// u8 rank, u32 dims and f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend(self.step.to_le_bytes());
        out.extend(self.optimizer.t.to_le_bytes());
        put_string(&mut out, &self.config.to_toml()?);
        put_string(&mut out, &self.inventory.to_tsv());
        out.extend((self.model.input_dim() as u32).to_le_bytes());
        let count: usize = self.tensor_sets().iter().map(|(_, m)| m.collect_params().len()).sum();
        out.extend((count as u32).to_le_bytes());
        for (prefix, m) in self.tensor_sets() {
            put_tensors(&mut out, prefix, m);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).map_err(|_| PaseError::BadMagic)? != CHECKPOINT_MAGIC {
            return Err(PaseError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(PaseError::UnsupportedVersion(version));
        }
        let step = r.u64()?;
        let t = r.u64()?;
        let config = TrainConfig::from_toml(&r.string()?)?;
        let inventory = PhonemeInventory::from_tsv(&r.string()?)?;
        let input_dim = r.u32()? as usize;
        let model = PaseModel::<f32>::zeros(&config.model_config(), input_dim, inventory.len())?;
        let mut ckpt = Checkpoint {
            step,
            inventory,
            optimizer: AdamState {
                m: model.clone(),
                v: model.clone(),
                t,
            },
            model,
            config,
        };
        let count = r.u32()? as usize;
        let expected: usize = ckpt.tensor_sets().iter().map(|(_, m)| m.collect_params().len()).sum();
        if count != expected {
            return Err(PaseError::Checkpoint(format!("{count} tensors stored, model has {expected}")));
        }
        let mut filled = 0usize;
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| PaseError::Checkpoint("invalid tensor name".into()))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (target, rest) = if let Some(rest) = name.strip_prefix("model.") {
                (&mut ckpt.model, rest)
            } else if let Some(rest) = name.strip_prefix("adam.m.") {
                (&mut ckpt.optimizer.m, rest)
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                (&mut ckpt.optimizer.v, rest)
            } else {
                return Err(PaseError::Checkpoint(format!("unexpected tensor {name}")));
            };
            let want_shape = target
                .collect_params()
                .into_iter()
                .find(|p| p.name == rest)
                .map(|p| p.shape)
                .ok_or_else(|| PaseError::Checkpoint(format!("unknown tensor {name}")))?;
            if want_shape != shape {
                return Err(PaseError::Checkpoint(format!("tensor {name} has shape {shape:?}, expected {want_shape:?}")));
            }
            let n: usize = shape.iter().product();
            let bytes = r.take(n * 4)?;
            let mut views = target.collect_params_mut();
            let dst = views.iter_mut().find(|p| p.name == rest).expect("found above");
            for (d, c) in dst.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
            filled += 1;
        }
        if filled != expected || r.pos != buf.len() {
            return Err(PaseError::Checkpoint("trailing or missing checkpoint data".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A run in progress over one corpus.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub bank: SegmentBank,
    pub train_pool: Vec<usize>,
    pub eval_pool: Vec<usize>,
    pub model: PaseModel<f32>,
    pub optimizer: AdamState<PaseModel<f32>>,
    /// Steps completed so far.
    pub step: u64,
    pub last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    /// Validates configuration and corpus before any step runs.
    pub fn new(config: &TrainConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        let bank = SegmentBank::build_sized(corpus, &config.frontend, config.model.crop_size)?;
        let model = PaseModel::new(&config.model_config(), config.frontend.feature_dim(), bank.inventory.len(), config.seed)?;
        Self::assemble(config.clone(), bank, model, None, 0)
    }

    pub fn resume(checkpoint: Checkpoint, corpus: &Corpus) -> Result<Self> {
        let cfg = checkpoint.config;
        cfg.validate()?;
        let bank = SegmentBank::build_sized(corpus, &cfg.frontend, cfg.model.crop_size)?;
        if bank.inventory != checkpoint.inventory {
            return Err(PaseError::Checkpoint("corpus inventory differs from the checkpoint".into()));
        }
        Self::assemble(cfg, bank, checkpoint.model, Some(checkpoint.optimizer), checkpoint.step)
    }

    fn assemble(
        config: TrainConfig,
        bank: SegmentBank,
        model: PaseModel<f32>,
        optimizer: Option<AdamState<PaseModel<f32>>>,
        step: u64,
    ) -> Result<Self> {
        let (train_pool, eval_pool) = bank.split_by_clip(config.holdout_fraction);
        if train_pool.is_empty() {
            return Err(PaseError::Corpus("no training segments".into()));
        }
        let first = bank.segments[train_pool[0]].viseme_class;
        if train_pool.iter().all(|&s| bank.segments[s].viseme_class == first) {
            return Err(PaseError::NoValidNegatives);
        }
        Ok(Self {
            optimizer: optimizer.unwrap_or_else(|| AdamState::new(&model)),
            config,
            bank,
            train_pool,
            eval_pool,
            model,
            step,
            last_checkpoint: None,
        })
    }

    /// Batch drawn for the 1-based step `step`; depends only on seed and step.
    pub fn batch_for_step(&self, step: u64) -> Result<AlignmentBatch> {
        sample_batch(
            &self.bank,
            &self.train_pool,
            self.config.batch_size,
            self.config.negatives_per_anchor,
            mix_seed(self.config.seed ^ SALT_BATCH, step),
            self.config.negative_policy,
        )
    }

    pub fn data_for_step(&self, step: u64) -> Result<BatchData<f32>> {
        let batch = self.batch_for_step(step)?;
        BatchData::gather(
            &self.bank,
            &batch,
            &self.config.model_config(),
            self.config.mask_ratio,
            mix_seed(self.config.seed ^ SALT_MASK, step),
        )
    }

    /// Objective of the current model on one fixed batch of the training
    /// pool; comparable across steps, unlike per-step batch losses.
    pub fn probe_loss(&self) -> Result<f64> {
        let salt = self.config.seed ^ SALT_PROBE;
        let batch = sample_batch(
            &self.bank,
            &self.train_pool,
            self.config.batch_size,
            self.config.negatives_per_anchor,
            mix_seed(salt, 0),
            self.config.negative_policy,
        )?;
        let data = BatchData::gather(&self.bank, &batch, &self.config.model_config(), self.config.mask_ratio, mix_seed(salt, 1))?;
        Ok(self.model.loss(&data, &self.config.contrastive())?.total)
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let next = self.step + 1;
        let data = self.data_for_step(next)?;
        match train_step(&mut self.model, &mut self.optimizer, &data, &self.config, next) {
            Ok(m) => {
                self.step = next;
                Ok(m)
            }
            Err(PaseError::Divergence { step, .. }) => Err(PaseError::Divergence {
                step,
                last_checkpoint: self.last_checkpoint.clone(),
            }),
            Err(e) => Err(e),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            inventory: self.bank.inventory.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn write_checkpoint(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("step_{:06}.ckpt", self.step));
        self.checkpoint().save(&path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(path)
    }

    /// Steps until `config.steps`, writing periodic and final checkpoints
    /// plus `metrics.txt` to `out_dir` when given.
    pub fn run(&mut self, out_dir: Option<&Path>, mut on_step: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let mut metrics = Vec::new();
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(fs::OpenOptions::new().create(true).append(true).open(dir.join("metrics.txt"))?)
            }
            None => None,
        };
        while self.step < self.config.steps {
            let m = self.step()?;
            on_step(&m);
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", m.to_record())?;
            }
            metrics.push(m);
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                    self.write_checkpoint(dir)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.write_checkpoint(dir)?;
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        Ok(metrics)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    pub trainer: Trainer,
}

pub fn train(config: &TrainConfig, corpus: &Corpus, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, corpus)?;
    let metrics = trainer.run(out_dir, |_| {})?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
        trainer,
    })
}

/// Worst relative error between the analytic gradient of the batch objective
/// and central differences, over every tensor not named in `opts.frozen`.
pub fn finite_difference_check(
    model: &PaseModel<f64>,
    data: &BatchData<f64>,
    cfg: &ContrastiveConfig,
    epsilon: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PaseError::InvalidEpsilon);
    }
    let (_, grad) = model.loss_and_grad(data, cfg)?;
    check_gradients_piecewise(model, &grad, epsilon, opts, |m| {
        m.loss_with_pattern(data, cfg).map(|(l, p)| (l.total, p)).unwrap_or((f64::NAN, 0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig {
            window: 5,
            grad_clip: Some(1.0),
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model_config().window, 5);
        assert!(TrainConfig::from_toml("no_such_key = 1").is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Linear::<f64> {
            weight: array![[1.0, -2.0]],
            bias: array![0.5],
        };
        let g = Linear {
            weight: array![[0.3, -4.0]],
            bias: array![0.0],
        };
        let mut opt = AdamState::new(&p);
        opt.update(&mut p, &g, 0.1, 0.9, 0.999, 1e-8);
        assert!((p.weight[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.weight[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(p.bias[0], 0.5);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn invalid_values_rejected() {
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { tau: 0.0, ..Default::default() },
            TrainConfig { window: 4, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(PaseError::InvalidConfig(_))));
        }
        TrainConfig::default().validate().unwrap();
    }
}
