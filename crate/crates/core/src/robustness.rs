//! Masked prediction and reconstruction of audio/visual feature sequences.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PaseError, Result};
use crate::nn::params::{join, push, push_mut};
use crate::nn::{Linear, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Fraction of time steps replaced, in `[0, 1)`.
    pub ratio: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { ratio: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub mask: Vec<bool>,
}

impl MaskPlan {
    pub fn none(len: usize) -> Self {
        Self { mask: vec![false; len] }
    }

    /// Exactly `round(ratio · len)` positions, chosen uniformly.
    pub fn sample<G: Rng>(len: usize, ratio: f64, rng: &mut G) -> Self {
        let count = ((ratio.clamp(0.0, 1.0) * len as f64).round() as usize).min(len);
        let mut mask = vec![false; len];
        for i in index::sample(rng, len, count) {
            mask[i] = true;
        }
        Self { mask }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Rows where the plan is set are replaced by `fill`.
pub fn apply_mask<R: Real>(seq: ArrayView2<R>, plan: &MaskPlan, fill: ArrayView1<R>) -> Result<Array2<R>> {
    if plan.mask.len() != seq.nrows() {
        return Err(PaseError::DimensionMismatch(format!(
            "mask covers {} steps, sequence has {}",
            plan.mask.len(),
            seq.nrows()
        )));
    }
    if fill.len() != seq.ncols() {
        return Err(PaseError::DimensionMismatch(format!(
            "fill vector has {} dims, sequence rows have {}",
            fill.len(),
            seq.ncols()
        )));
    }
    let mut out = seq.to_owned();
    for (mut row, &m) in out.rows_mut().into_iter().zip(&plan.mask) {
        if m {
            row.assign(&fill);
        }
    }
    Ok(out)
}

/// Splits the gradient of a masked sequence into the unmasked input rows and
/// the summed fill-vector gradient.
pub fn apply_mask_backward<R: Real>(d_masked: ArrayView2<R>, plan: &MaskPlan) -> (Array2<R>, Array1<R>) {
    let mut d_seq = d_masked.to_owned();
    let mut d_fill = Array1::zeros(d_masked.ncols());
    for (mut row, &m) in d_seq.rows_mut().into_iter().zip(&plan.mask) {
        if m {
            d_fill += &row;
            row.fill(R::zero());
        }
    }
    (d_seq, d_fill)
}

/// Per-step affine map.
pub fn reconstruct<R: Real>(masked: ArrayView2<R>, head: &Linear<R>) -> Array2<R> {
    head.forward_rows(masked)
}

/// `(‖v_rec − v‖² + ‖a_rec − a‖²) / N`, `N` the total element count of both.
pub fn reconstruction_loss<R: Real>(
    v_rec: ArrayView2<R>,
    v_orig: ArrayView2<R>,
    a_rec: ArrayView2<R>,
    a_orig: ArrayView2<R>,
) -> Result<R> {
    if v_rec.dim() != v_orig.dim() || a_rec.dim() != a_orig.dim() {
        return Err(PaseError::DimensionMismatch(
            "reconstruction and original differ in shape".into(),
        ));
    }
    let n = v_rec.len() + a_rec.len();
    if n == 0 {
        return Ok(R::zero());
    }
    let sq = |x: ArrayView2<R>, y: ArrayView2<R>| -> R { x.iter().zip(y.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum() };
    Ok((sq(v_rec, v_orig) + sq(a_rec, a_orig)) / R::of(n as f64))
}

/// `2 (rec − orig) / N` for each modality; the originals receive the negation.
pub fn reconstruction_loss_grad<R: Real>(
    v_rec: ArrayView2<R>,
    v_orig: ArrayView2<R>,
    a_rec: ArrayView2<R>,
    a_orig: ArrayView2<R>,
) -> (Array2<R>, Array2<R>) {
    let n = (v_rec.len() + a_rec.len()).max(1);
    let k = R::of(2.0 / n as f64);
    ((&v_rec - &v_orig) * k, (&a_rec - &a_orig) * k)
}

/// Learnable fill vectors and reconstruction heads for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Robustness<R> {
    pub audio_fill: Array1<R>,
    pub visual_fill: Array1<R>,
    pub audio_head: Linear<R>,
    pub visual_head: Linear<R>,
}

impl<R: Real> Robustness<R> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            audio_fill: Array1::zeros(dim),
            visual_fill: Array1::zeros(dim),
            audio_head: Linear::zeros(dim, dim),
            visual_head: Linear::zeros(dim, dim),
        }
    }

    /// Fills start at zero; heads are uniform(±1/√dim).
    pub fn uniform<G: Rng>(dim: usize, rng: &mut G) -> Self {
        let k = 1.0 / (dim as f64).sqrt();
        Self {
            audio_fill: Array1::zeros(dim),
            visual_fill: Array1::zeros(dim),
            audio_head: Linear::uniform(dim, dim, k, rng),
            visual_head: Linear::uniform(dim, dim, k, rng),
        }
    }
}

impl<R: Real> Parameters<R> for Robustness<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        push(out, prefix, "audio_fill", &self.audio_fill);
        push(out, prefix, "visual_fill", &self.visual_fill);
        self.audio_head.params(&join(prefix, "audio_head"), out);
        self.visual_head.params(&join(prefix, "visual_head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        push_mut(out, prefix, "audio_fill", &mut self.audio_fill);
        push_mut(out, prefix, "visual_fill", &mut self.visual_fill);
        self.audio_head.params_mut(&join(prefix, "audio_head"), out);
        self.visual_head.params_mut(&join(prefix, "visual_head"), out);
    }
}

/// Mean column of a sequence; used by callers that need a per-step summary.
pub fn column_mean<R: Real>(seq: ArrayView2<R>) -> Option<Array1<R>> {
    seq.mean_axis(Axis(0))
}
