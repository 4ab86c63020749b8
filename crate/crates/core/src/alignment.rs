//! Phoneme-aware query, cross-attention fusion and the contrastive objective.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PaseError, Result};
use crate::nn::init::uniform_array;
use crate::nn::params::{join, push, push_mut};
use crate::nn::{Linear, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub similarity: Similarity,
    /// Weight of the reconstruction term in the total objective.
    pub alpha: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            similarity: Similarity::Cosine,
            alpha: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(PaseError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PaseError::InvalidConfig(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Row `p` is the learned embedding of phoneme `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeEmbeddingTable<R> {
    pub table: Array2<R>,
}

impl<R: Real> PhonemeEmbeddingTable<R> {
    pub fn zeros(phonemes: usize, dim: usize) -> Self {
        Self {
            table: Array2::zeros((phonemes, dim)),
        }
    }

    pub fn uniform<G: Rng>(phonemes: usize, dim: usize, bound: f64, rng: &mut G) -> Self {
        Self {
            table: uniform_array(rng, (phonemes, dim), bound),
        }
    }

    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn row(&self, phoneme_id: usize) -> Result<ArrayView1<'_, R>> {
        if phoneme_id >= self.len() {
            return Err(PaseError::UnknownPhoneme(format!("id {phoneme_id}")));
        }
        Ok(self.table.row(phoneme_id))
    }
}

impl<R: Real> Parameters<R> for PhonemeEmbeddingTable<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        push(out, prefix, "table", &self.table);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        push_mut(out, prefix, "table", &mut self.table);
    }
}

/// `Q = A + F[phoneme_id]`.
pub fn build_query<R: Real>(a_p: ArrayView1<R>, phoneme_id: usize, table: &PhonemeEmbeddingTable<R>) -> Result<Array1<R>> {
    let row = table.row(phoneme_id)?;
    if row.len() != a_p.len() {
        return Err(PaseError::DimensionMismatch(format!(
            "anchor has {} dims, phoneme table {}",
            a_p.len(),
            row.len()
        )));
    }
    Ok(&a_p + &row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention<R> {
    pub query: Linear<R>,
    pub key: Linear<R>,
    pub value: Linear<R>,
    pub heads: usize,
}

/// Intermediates of one attention evaluation.
#[derive(Debug, Clone)]
pub struct AttentionTrace<R> {
    pub q: Array1<R>,
    pub k: Array2<R>,
    pub v: Array2<R>,
    /// `heads × T_v`, each row a softmax.
    pub weights: Array2<R>,
}

fn softmax_in_place<R: Real>(mut row: ndarray::ArrayViewMut1<R>) {
    let m = row.iter().copied().fold(R::neg_infinity(), R::max);
    let mut sum = R::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    row.mapv_inplace(|v| v / sum);
}

impl<R: Real> CrossAttention<R> {
    pub fn identity(dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::identity(dim),
            key: Linear::identity(dim),
            value: Linear::identity(dim),
            heads,
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::zeros(dim, dim),
            key: Linear::zeros(dim, dim),
            value: Linear::zeros(dim, dim),
            heads,
        }
    }

    /// Projections uniform(±1/√dim).
    pub fn uniform<G: Rng>(dim: usize, heads: usize, rng: &mut G) -> Self {
        let k = 1.0 / (dim as f64).sqrt();
        Self {
            query: Linear::uniform(dim, dim, k, rng),
            key: Linear::uniform(dim, dim, k, rng),
            value: Linear::uniform(dim, dim, k, rng),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim() % self.heads != 0 {
            return Err(PaseError::InvalidConfig(format!(
                "{} heads do not divide dimension {}",
                self.heads,
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, q: ArrayView1<R>, kv: ArrayView2<R>) -> Result<(Array1<R>, AttentionTrace<R>)> {
        self.validate()?;
        if kv.nrows() == 0 {
            return Err(PaseError::EmptySequence);
        }
        if q.len() != self.query.input_dim() || kv.ncols() != self.key.input_dim() {
            return Err(PaseError::DimensionMismatch(format!(
                "attention over dim {} got query {} and rows {}",
                self.query.input_dim(),
                q.len(),
                kv.ncols()
            )));
        }
        let qp = self.query.forward(q);
        let k = self.key.forward_rows(kv);
        let v = self.value.forward_rows(kv);
        let dh = self.dim() / self.heads;
        let scale = R::of(1.0 / (dh as f64).sqrt());
        let mut weights = Array2::zeros((self.heads, kv.nrows()));
        let mut out = Array1::zeros(self.dim());
        for h in 0..self.heads {
            let cols = s![h * dh..(h + 1) * dh];
            let qh = qp.slice(cols);
            let kh = k.slice(s![.., h * dh..(h + 1) * dh]);
            let mut w = weights.row_mut(h);
            w.assign(&(kh.dot(&qh) * scale));
            softmax_in_place(w.view_mut());
            out.slice_mut(cols).assign(&v.slice(s![.., h * dh..(h + 1) * dh]).t().dot(&w));
        }
        Ok((out, AttentionTrace { q: qp, k, v, weights }))
    }

    /// Accumulates projection gradients and returns `(dL/dq, dL/dkv)`.
    pub fn backward(
        &self,
        q: ArrayView1<R>,
        kv: ArrayView2<R>,
        trace: &AttentionTrace<R>,
        d_out: ArrayView1<R>,
        grad: &mut Self,
    ) -> (Array1<R>, Array2<R>) {
        let dh = self.dim() / self.heads;
        let scale = R::of(1.0 / (dh as f64).sqrt());
        let t = kv.nrows();
        let mut dqp = Array1::zeros(self.dim());
        let mut dk = Array2::zeros((t, self.dim()));
        let mut dv = Array2::zeros((t, self.dim()));
        for h in 0..self.heads {
            let cols = s![h * dh..(h + 1) * dh];
            let w = trace.weights.row(h);
            let dout_h = d_out.slice(cols);
            let vh = trace.v.slice(s![.., h * dh..(h + 1) * dh]);
            let kh = trace.k.slice(s![.., h * dh..(h + 1) * dh]);
            let qh = trace.q.slice(cols);
            let dw = vh.dot(&dout_h);
            let inner: R = w.iter().zip(dw.iter()).map(|(&a, &b)| a * b).sum();
            let ds = Array1::from_shape_fn(t, |i| w[i] * (dw[i] - inner) * scale);
            for i in 0..t {
                dv.slice_mut(s![i, h * dh..(h + 1) * dh]).scaled_add(w[i], &dout_h);
                dk.slice_mut(s![i, h * dh..(h + 1) * dh]).scaled_add(ds[i], &qh);
            }
            dqp.slice_mut(cols).assign(&kh.t().dot(&ds));
        }
        let dq = self.query.backward(q, dqp.view(), &mut grad.query);
        let dkv = self.key.backward_rows(kv, dk.view(), &mut grad.key) + self.value.backward_rows(kv, dv.view(), &mut grad.value);
        (dq, dkv)
    }
}

impl<R: Real> Parameters<R> for CrossAttention<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        self.query.params(&join(prefix, "query"), out);
        self.key.params(&join(prefix, "key"), out);
        self.value.params(&join(prefix, "value"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        self.query.params_mut(&join(prefix, "query"), out);
        self.key.params_mut(&join(prefix, "key"), out);
        self.value.params_mut(&join(prefix, "value"), out);
    }
}

pub fn cross_attention<R: Real>(q: ArrayView1<R>, kv: ArrayView2<R>, params: &CrossAttention<R>) -> Result<Array1<R>> {
    params.forward(q, kv).map(|(out, _)| out)
}

/// Attention applied to the phoneme-aware query built from `a_p`.
pub fn fuse_pair<R: Real>(
    a_p: ArrayView1<R>,
    phoneme_id: usize,
    visual_seq: ArrayView2<R>,
    table: &PhonemeEmbeddingTable<R>,
    attention: &CrossAttention<R>,
) -> Result<Array1<R>> {
    let q = build_query(a_p, phoneme_id, table)?;
    cross_attention(q.view(), visual_seq, attention)
}

fn norm<R: Real>(x: ArrayView1<R>) -> R {
    x.dot(&x).sqrt()
}

pub fn cosine<R: Real>(a: ArrayView1<R>, b: ArrayView1<R>) -> Result<R> {
    let (na, nb) = (norm(a), norm(b));
    if na == R::zero() || nb == R::zero() {
        return Err(PaseError::ZeroNorm);
    }
    Ok(a.dot(&b) / (na * nb))
}

/// `(∂c/∂a, ∂c/∂b)` scaled by `d`.
pub fn cosine_backward<R: Real>(a: ArrayView1<R>, b: ArrayView1<R>, d: R) -> Result<(Array1<R>, Array1<R>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == R::zero() || nb == R::zero() {
        return Err(PaseError::ZeroNorm);
    }
    let c = a.dot(&b) / (na * nb);
    let da = (&b / (na * nb) - &a * (c / (na * na))) * d;
    let db = (&a / (na * nb) - &b * (c / (nb * nb))) * d;
    Ok((da, db))
}

/// InfoNCE on precomputed similarities: `logsumexp(s/τ) − s_pos/τ`.
pub fn contrastive_from_similarities<R: Real>(s_pos: R, s_negs: &[R], tau: R) -> R {
    let l0 = s_pos / tau;
    let m = s_negs.iter().map(|&s| s / tau).fold(l0, R::max);
    let sum = (l0 - m).exp() + s_negs.iter().map(|&s| (s / tau - m).exp()).sum::<R>();
    m + sum.ln() - l0
}

/// Gradient of [`contrastive_from_similarities`] with respect to
/// `(s_pos, s_negs)`.
pub fn contrastive_similarity_grad<R: Real>(s_pos: R, s_negs: &[R], tau: R) -> (R, Vec<R>) {
    let l0 = s_pos / tau;
    let m = s_negs.iter().map(|&s| s / tau).fold(l0, R::max);
    let e0 = (l0 - m).exp();
    let en: Vec<R> = s_negs.iter().map(|&s| (s / tau - m).exp()).collect();
    let z = e0 + en.iter().copied().sum::<R>();
    let d_pos = (e0 / z - R::one()) / tau;
    (d_pos, en.into_iter().map(|e| e / z / tau).collect())
}

pub fn contrastive_loss<R: Real>(
    anchor: ArrayView1<R>,
    pos: ArrayView1<R>,
    negs: &[ArrayView1<R>],
    cfg: &ContrastiveConfig,
) -> Result<R> {
    cfg.validate()?;
    let s_pos = cosine(anchor, pos)?;
    let s_negs = negs.iter().map(|n| cosine(anchor, *n)).collect::<Result<Vec<R>>>()?;
    Ok(contrastive_from_similarities(s_pos, &s_negs, R::of(cfg.tau)))
}

pub fn total_loss<R: Real>(l_con: R, l_rec: R, cfg: &ContrastiveConfig) -> R {
    l_con + R::of(cfg.alpha) * l_rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::seeded_rng;
    use ndarray::array;

    #[test]
    fn query_is_sum() {
        let table = PhonemeEmbeddingTable {
            table: array![[1.0, 2.0], [0.0, 0.0]],
        };
        let a = array![0.5, -1.0];
        assert_eq!(build_query(a.view(), 0, &table).unwrap(), array![1.5, 1.0]);
        assert_eq!(build_query(a.view(), 1, &table).unwrap(), a);
        assert!(matches!(build_query(a.view(), 2, &table), Err(PaseError::UnknownPhoneme(_))));
    }

    #[test]
    fn single_row_attention_returns_value() {
        let att = CrossAttention::<f64>::identity(3, 1);
        let kv = array![[0.2, -0.4, 1.0]];
        let out = cross_attention(array![5.0, 1.0, -2.0].view(), kv.view(), &att).unwrap();
        assert_eq!(out, kv.row(0));
        assert!(matches!(
            cross_attention(array![1.0, 1.0, 1.0].view(), Array2::zeros((0, 3)).view(), &att),
            Err(PaseError::EmptySequence)
        ));
    }

    #[test]
    fn heads_must_divide_dim() {
        let att = CrossAttention::<f64>::identity(4, 3);
        assert!(att.forward(Array1::zeros(4).view(), Array2::zeros((1, 4)).view()).is_err());
        let att = CrossAttention::<f64>::identity(4, 2);
        let (_, tr) = att.forward(array![1.0, 0.0, 0.0, 1.0].view(), Array2::ones((3, 4)).view()).unwrap();
        assert_eq!(tr.weights.dim(), (2, 3));
    }

    #[test]
    fn closed_form_contrastive_values() {
        assert_eq!(contrastive_from_similarities(0.3, &[], 0.07), 0.0);
        let l: f64 = contrastive_from_similarities(0.3, &[0.3], 0.07);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let a = array![1.0, 0.0];
        let l: f64 = contrastive_loss(a.view(), a.view(), &[array![0.0, 1.0].view()], &ContrastiveConfig::default()).unwrap();
        assert!((l - (1.0 + (-1.0f64 / 0.07).exp()).ln()).abs() < 1e-15);
        assert!(matches!(
            contrastive_loss(a.view(), Array1::zeros(2).view(), &[], &ContrastiveConfig::default()),
            Err(PaseError::ZeroNorm)
        ));
    }

    #[test]
    fn similarity_gradient_matches_differences() {
        let s_negs = [0.1, -0.4, 0.35];
        let (dp, dn) = contrastive_similarity_grad(0.2, &s_negs, 0.07);
        let h = 1e-6;
        let f = |p: f64, n: &[f64]| contrastive_from_similarities(p, n, 0.07);
        assert!(((f(0.2 + h, &s_negs) - f(0.2 - h, &s_negs)) / (2.0 * h) - dp).abs() < 1e-6);
        for i in 0..3 {
            let mut up = s_negs;
            up[i] += h;
            let mut dn_ = s_negs;
            dn_[i] -= h;
            assert!(((f(0.2, &up) - f(0.2, &dn_)) / (2.0 * h) - dn[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let a: Array1<f64> = array![0.3, -1.2, 0.5];
        let b = array![1.0, 0.4, -0.7];
        let (da, db) = cosine_backward(a.view(), b.view(), 1.0).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = a.clone();
            up[i] += h;
            let mut dn = a.clone();
            dn[i] -= h;
            let num = (cosine(up.view(), b.view()).unwrap() - cosine(dn.view(), b.view()).unwrap()) / (2.0 * h);
            assert!((num - da[i]).abs() < 1e-8);
            let mut up = b.clone();
            up[i] += h;
            let mut dn = b.clone();
            dn[i] -= h;
            let num = (cosine(a.view(), up.view()).unwrap() - cosine(a.view(), dn.view()).unwrap()) / (2.0 * h);
            assert!((num - db[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_backward_matches_differences() {
        let mut rng = seeded_rng(3, 0, 0);
        for heads in [1, 2] {
            let att = CrossAttention::<f64>::uniform(4, heads, &mut rng);
            let q: Array1<f64> = uniform_array(&mut rng, 4, 1.0);
            let kv: Array2<f64> = uniform_array(&mut rng, (3, 4), 1.0);
            let dout: Array1<f64> = uniform_array(&mut rng, 4, 1.0);
            let loss = |q: &Array1<f64>, kv: &Array2<f64>| cross_attention(q.view(), kv.view(), &att).unwrap().dot(&dout);
            let (_, tr) = att.forward(q.view(), kv.view()).unwrap();
            let mut g = CrossAttention::zeros(4, heads);
            let (dq, dkv) = att.backward(q.view(), kv.view(), &tr, dout.view(), &mut g);
            let h = 1e-6;
            for i in 0..4 {
                let (mut up, mut dn) = (q.clone(), q.clone());
                up[i] += h;
                dn[i] -= h;
                assert!(((loss(&up, &kv) - loss(&dn, &kv)) / (2.0 * h) - dq[i]).abs() < 1e-8);
            }
            for idx in [(0, 0), (1, 3), (2, 2)] {
                let (mut up, mut dn) = (kv.clone(), kv.clone());
                up[idx] += h;
                dn[idx] -= h;
                assert!(((loss(&q, &up) - loss(&q, &dn)) / (2.0 * h) - dkv[idx]).abs() < 1e-8);
            }
        }
    }
}
