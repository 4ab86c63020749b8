//! Spectrogram → audio embedding: stacked GRU (default) or a 1-D CNN.
//!
//! Every gate reads the concatenation `[h_{t−1}, x_t]`, hidden part first.
//! Weight matrices are stored `H × (H + X)` so the hidden block is the column
//! range `..H`.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PaseError, Result};
use crate::nn::params::join;
use crate::nn::init::uniform_array;
use crate::nn::{sigmoid, Conv2d, ReluPattern, ConvGeometry, Linear, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Top-layer state at the final time step.
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    #[default]
    Gru,
    Cnn,
}

impl std::str::FromStr for EncoderVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gru" => Ok(EncoderVariant::Gru),
            "cnn" => Ok(EncoderVariant::Cnn),
            other => Err(format!("unknown encoder {other:?} (expected gru or cnn)")),
        }
    }
}

pub fn pool<R: Real>(seq: ArrayView2<R>, pooling: Pooling) -> Array1<R> {
    match pooling {
        Pooling::Last => seq.row(seq.nrows() - 1).to_owned(),
        Pooling::Mean => seq.mean_axis(Axis(0)).expect("non-empty sequence"),
    }
}

/// Gradient of [`pool`] with respect to its input sequence.
pub fn pool_backward<R: Real>(d_pooled: ArrayView1<R>, rows: usize, pooling: Pooling) -> Array2<R> {
    let mut d = Array2::zeros((rows, d_pooled.len()));
    match pooling {
        Pooling::Last => d.row_mut(rows - 1).assign(&d_pooled),
        Pooling::Mean => {
            let share = d_pooled.mapv(|v| v / R::of(rows as f64));
            for mut row in d.rows_mut() {
                row.assign(&share);
            }
        }
    }
    d
}

/// One GRU layer: update gate `z`, reset gate `r`, candidate `h̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<R> {
    pub update: Linear<R>,
    pub reset: Linear<R>,
    pub candidate: Linear<R>,
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct GruTrace<R> {
    input: Array2<R>,
    /// `(T + 1) × H`; row 0 is the zero initial state.
    h: Array2<R>,
    z: Array2<R>,
    r: Array2<R>,
    candidate: Array2<R>,
}

impl<R> GruTrace<R> {
    pub fn output(&self) -> ArrayView2<'_, R> {
        self.h.slice(s![1.., ..])
    }
}

impl<R: Real> GruLayer<R> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            update: Linear::zeros(hidden + input, hidden),
            reset: Linear::zeros(hidden + input, hidden),
            candidate: Linear::zeros(hidden + input, hidden),
        }
    }

    /// Uniform(−1/√H, 1/√H) for every weight and bias.
    pub fn uniform<G: Rng>(input: usize, hidden: usize, rng: &mut G) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            update: Linear::uniform(hidden + input, hidden, k, rng),
            reset: Linear::uniform(hidden + input, hidden, k, rng),
            candidate: Linear::uniform(hidden + input, hidden, k, rng),
        }
    }

    /// Zero biases, input weights uniform(±√(6/X)) and recurrent weights
    /// uniform(±1/√H). Keeps the input signal alive through deep stacks,
    /// where the all-uniform scheme lets biases dominate the top layer.
    pub fn deep<G: Rng>(input: usize, hidden: usize, rng: &mut G) -> Self {
        let (kx, kh) = ((6.0 / input as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        let mut gate = || {
            let mut lin = Linear::zeros(hidden + input, hidden);
            lin.weight.slice_mut(s![.., ..hidden]).assign(&uniform_array(rng, (hidden, hidden), kh));
            lin.weight.slice_mut(s![.., hidden..]).assign(&uniform_array(rng, (hidden, input), kx));
            lin
        };
        Self {
            update: gate(),
            reset: gate(),
            candidate: gate(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.update.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.update.input_dim() - self.hidden_dim()
    }

    fn split<'a>(&self, lin: &'a Linear<R>) -> (ArrayView2<'a, R>, ArrayView2<'a, R>) {
        let h = self.hidden_dim();
        (lin.weight.slice(s![.., ..h]), lin.weight.slice(s![.., h..]))
    }

    /// Runs the layer over `x` (`T × X`) from a zero state.
    pub fn forward(&self, x: ArrayView2<R>) -> GruTrace<R> {
        let (t_len, hdim) = (x.nrows(), self.hidden_dim());
        let (wz_h, wz_x) = self.split(&self.update);
        let (wr_h, wr_x) = self.split(&self.reset);
        let (wh_h, wh_x) = self.split(&self.candidate);
        let xz = x.dot(&wz_x.t()) + &self.update.bias;
        let xr = x.dot(&wr_x.t()) + &self.reset.bias;
        let xh = x.dot(&wh_x.t()) + &self.candidate.bias;

        let mut h = Array2::zeros((t_len + 1, hdim));
        let mut z = Array2::zeros((t_len, hdim));
        let mut r = Array2::zeros((t_len, hdim));
        let mut cand = Array2::zeros((t_len, hdim));
        for t in 0..t_len {
            let hp = h.row(t).to_owned();
            let zt = (&xz.row(t) + &wz_h.dot(&hp)).mapv(sigmoid);
            let rt = (&xr.row(t) + &wr_h.dot(&hp)).mapv(sigmoid);
            let ct = (&xh.row(t) + &wh_h.dot(&(&rt * &hp))).mapv(R::tanh);
            let ht = zt.mapv(|v| R::one() - v) * &hp + &zt * &ct;
            h.row_mut(t + 1).assign(&ht);
            z.row_mut(t).assign(&zt);
            r.row_mut(t).assign(&rt);
            cand.row_mut(t).assign(&ct);
        }
        GruTrace {
            input: x.to_owned(),
            h,
            z,
            r,
            candidate: cand,
        }
    }

    /// Backpropagation through time. `dh_out` is `dL/dh_t` for `t = 1..=T`.
    pub fn backward(&self, trace: &GruTrace<R>, dh_out: ArrayView2<R>, grad: &mut Self, need_input_grad: bool) -> Option<Array2<R>> {
        let (t_len, hdim) = (trace.z.nrows(), self.hidden_dim());
        let (wz_h, wz_x) = self.split(&self.update);
        let (wr_h, wr_x) = self.split(&self.reset);
        let (wh_h, wh_x) = self.split(&self.candidate);
        let mut daz = Array2::<R>::zeros((t_len, hdim));
        let mut dar = Array2::<R>::zeros((t_len, hdim));
        let mut dah = Array2::<R>::zeros((t_len, hdim));
        let mut dh_next = Array1::<R>::zeros(hdim);
        let one = R::one();
        for t in (0..t_len).rev() {
            let dh = &dh_out.row(t) + &dh_next;
            let hp = trace.h.row(t);
            let (zt, rt, ct) = (trace.z.row(t), trace.r.row(t), trace.candidate.row(t));
            let dz = &dh * &(&ct - &hp);
            let mut dhp = &dh * &zt.mapv(|v| one - v);
            let dah_t = &dh * &zt * &ct.mapv(|v| one - v * v);
            let d_rh = wh_h.t().dot(&dah_t);
            let dr = &d_rh * &hp;
            dhp += &(&d_rh * &rt);
            let daz_t = &dz * &zt.mapv(|v| v * (one - v));
            let dar_t = &dr * &rt.mapv(|v| v * (one - v));
            dhp += &wz_h.t().dot(&daz_t);
            dhp += &wr_h.t().dot(&dar_t);
            daz.row_mut(t).assign(&daz_t);
            dar.row_mut(t).assign(&dar_t);
            dah.row_mut(t).assign(&dah_t);
            dh_next = dhp;
        }

        let h_prev = trace.h.slice(s![..t_len, ..]);
        let rh = &trace.r * &h_prev;
        let x = trace.input.view();
        for (lin, da, hin) in [
            (&mut grad.update, &daz, h_prev.to_owned()),
            (&mut grad.reset, &dar, h_prev.to_owned()),
            (&mut grad.candidate, &dah, rh),
        ] {
            general_mat_mul(one, &da.t(), &hin, one, &mut lin.weight.slice_mut(s![.., ..hdim]));
            general_mat_mul(one, &da.t(), &x, one, &mut lin.weight.slice_mut(s![.., hdim..]));
            lin.bias += &da.sum_axis(Axis(0));
        }
        if !need_input_grad {
            return None;
        }
        Some(daz.dot(&wz_x) + dar.dot(&wr_x) + dah.dot(&wh_x))
    }
}

impl<R: Real> Parameters<R> for GruLayer<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        self.update.params(&join(prefix, "update"), out);
        self.reset.params(&join(prefix, "reset"), out);
        self.candidate.params(&join(prefix, "candidate"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        self.update.params_mut(&join(prefix, "update"), out);
        self.reset.params_mut(&join(prefix, "reset"), out);
        self.candidate.params_mut(&join(prefix, "candidate"), out);
    }
}

/// A single GRU step: gates from `[h_prev, x]`, then the convex update.
pub fn gru_cell_step<R: Real>(x: ArrayView1<R>, h_prev: ArrayView1<R>, layer: &GruLayer<R>) -> Result<Array1<R>> {
    if x.len() != layer.input_dim() || h_prev.len() != layer.hidden_dim() {
        return Err(PaseError::DimensionMismatch(format!(
            "GRU cell expects x of {} and h of {}, got {} and {}",
            layer.input_dim(),
            layer.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    let hx = concatenate![Axis(0), h_prev, x];
    let z = layer.update.forward(hx.view()).mapv(sigmoid);
    let r = layer.reset.forward(hx.view()).mapv(sigmoid);
    let rhx = concatenate![Axis(0), &r * &h_prev, x];
    let cand = layer.candidate.forward(rhx.view()).mapv(R::tanh);
    Ok(z.mapv(|v| R::one() - v) * &h_prev + &z * &cand)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStack<R> {
    pub layers: Vec<GruLayer<R>>,
}

impl<R: Real> GruStack<R> {
    pub fn uniform<G: Rng>(input: usize, hidden: usize, depth: usize, rng: &mut G) -> Self {
        let layers = (0..depth)
            .map(|l| GruLayer::uniform(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn deep<G: Rng>(input: usize, hidden: usize, depth: usize, rng: &mut G) -> Self {
        let layers = (0..depth)
            .map(|l| GruLayer::deep(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(input: usize, hidden: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| GruLayer::zeros(if l == 0 { input } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn forward(&self, x: ArrayView2<R>) -> Vec<GruTrace<R>> {
        let mut traces: Vec<GruTrace<R>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let trace = match traces.last() {
                None => layer.forward(x),
                Some(prev) => layer.forward(prev.output()),
            };
            traces.push(trace);
        }
        traces
    }

    /// `d_top` is the gradient of the top layer's output sequence.
    pub fn backward(&self, traces: &[GruTrace<R>], d_top: Array2<R>, grad: &mut Self) {
        let mut d = d_top;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            match layer.backward(&traces[l], d.view(), &mut grad.layers[l], l > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl<R: Real> Parameters<R> for GruStack<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&join(prefix, &format!("layer{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&join(prefix, &format!("layer{i}")), out);
        }
    }
}

fn check_input(rows: usize, cols: usize, expected: usize) -> Result<()> {
    if rows == 0 {
        return Err(PaseError::EmptySequence);
    }
    if cols != expected {
        return Err(PaseError::DimensionMismatch(format!(
            "spectrogram has {cols} bins, encoder expects {expected}"
        )));
    }
    Ok(())
}

/// Top-layer sequence (`T × H`) and pooled anchor embedding.
pub fn encode_audio<R: Real>(spec: ArrayView2<R>, stack: &GruStack<R>, pooling: Pooling) -> Result<(Array2<R>, Array1<R>)> {
    check_input(spec.nrows(), spec.ncols(), stack.input_dim())?;
    let traces = stack.forward(spec);
    let seq = traces.last().expect("at least one layer").output().to_owned();
    let pooled = pool(seq.view(), pooling);
    Ok((seq, pooled))
}

/// Convolutional ablation encoder: 1-D convolutions along time with the
/// frequency bins as input channels, ReLU between layers, linear last layer,
/// then global average pooling over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioCnnConfig {
    /// Channel counts of the hidden layers; the last layer maps to the embedding.
    pub hidden_channels: Vec<usize>,
    pub kernel: usize,
    /// One stride per layer (`hidden_channels.len() + 1` entries).
    pub strides: Vec<usize>,
}

impl Default for AudioCnnConfig {
    fn default() -> Self {
        Self {
            hidden_channels: vec![64],
            kernel: 3,
            strides: vec![1, 2],
        }
    }
}

impl AudioCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != self.hidden_channels.len() + 1 {
            return Err(PaseError::InvalidConfig(
                "audio CNN needs one stride per layer (hidden_channels.len() + 1)".into(),
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 || self.strides.contains(&0) || self.hidden_channels.contains(&0) {
            return Err(PaseError::InvalidConfig("audio CNN kernel must be odd; strides and channels positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioCnn<R> {
    pub layers: Vec<Conv2d<R>>,
}

#[derive(Debug, Clone)]
pub struct CnnTrace<R> {
    /// Input of each layer, `C × 1 × T`.
    inputs: Vec<Array3<R>>,
    /// Pre-activation output of each layer.
    outputs: Vec<Array3<R>>,
}

impl AudioCnnConfig {
    /// Encoder output steps for `frames` spectrogram frames, or `None` if the
    /// input is too short for some layer.
    pub fn output_steps(&self, frames: usize) -> Option<usize> {
        AudioCnn::<f64>::geometries(self)
            .iter()
            .try_fold(frames, |t, g| g.output_shape(1, t).map(|(_, w)| w))
    }
}

impl<R: Real> AudioCnn<R> {
    fn geometries(cfg: &AudioCnnConfig) -> Vec<ConvGeometry> {
        cfg.strides
            .iter()
            .map(|&s| ConvGeometry {
                kernel: (1, cfg.kernel),
                stride: (1, s),
                padding: (0, cfg.kernel / 2),
            })
            .collect()
    }

    fn channels(input: usize, embed: usize, cfg: &AudioCnnConfig) -> Vec<usize> {
        let mut ch = vec![input];
        ch.extend(&cfg.hidden_channels);
        ch.push(embed);
        ch
    }

    pub fn he_uniform<G: Rng>(input: usize, embed: usize, cfg: &AudioCnnConfig, rng: &mut G) -> Self {
        let ch = Self::channels(input, embed, cfg);
        let layers = Self::geometries(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, g)| Conv2d::he_uniform(ch[i], ch[i + 1], g, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(input: usize, embed: usize, cfg: &AudioCnnConfig) -> Self {
        let ch = Self::channels(input, embed, cfg);
        let layers = Self::geometries(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, g)| Conv2d::zeros(ch[i], ch[i + 1], g))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_channels()
    }

    /// Pre-pooling map (`T' × E`) and the trace for backpropagation.
    pub fn forward(&self, spec: ArrayView2<R>) -> (Array2<R>, CnnTrace<R>) {
        let (t_len, f) = spec.dim();
        let mut x = spec
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((f, 1, t_len))
            .expect("contiguous input");
        let mut trace = CnnTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let last = self.layers.len() - 1;
        for (i, conv) in self.layers.iter().enumerate() {
            let y = conv.forward(x.view());
            trace.inputs.push(x);
            x = if i < last { y.mapv(crate::nn::relu) } else { y.clone() };
            trace.outputs.push(y);
        }
        let (e, _, t_out) = x.dim();
        let seq = x
            .into_shape_with_order((e, t_out))
            .expect("contiguous output")
            .t()
            .as_standard_layout()
            .into_owned();
        (seq, trace)
    }

    pub fn backward(&self, trace: &CnnTrace<R>, d_seq: ArrayView2<R>, grad: &mut Self) {
        let (t_out, e) = d_seq.dim();
        let mut d = d_seq
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((e, 1, t_out))
            .expect("contiguous gradient");
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                d.zip_mut_with(&trace.outputs[i], |g, &y| {
                    if y <= R::zero() {
                        *g = R::zero();
                    }
                });
            }
            match self.layers[i].backward(trace.inputs[i].view(), d.view(), &mut grad.layers[i], i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl<R: Real> Parameters<R> for AudioCnn<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

/// Mean-pooled CNN embedding.
pub fn encode_audio_cnn<R: Real>(spec: ArrayView2<R>, cnn: &AudioCnn<R>) -> Result<Array1<R>> {
    check_input(spec.nrows(), spec.ncols(), cnn.input_dim())?;
    let (seq, _) = cnn.forward(spec);
    Ok(pool(seq.view(), Pooling::Mean))
}

/// Either temporal model behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioEncoder<R> {
    Gru(GruStack<R>),
    Cnn(AudioCnn<R>),
}

#[derive(Debug, Clone)]
pub enum AudioTrace<R> {
    Gru(Vec<GruTrace<R>>),
    Cnn(CnnTrace<R>),
}

impl<R: Real> AudioTrace<R> {
    /// Sign pattern of every ReLU input; the recurrent variant has none.
    pub fn fold_relu_pattern(&self, pattern: &mut ReluPattern) {
        if let AudioTrace::Cnn(t) = self {
            if let Some((_, hidden)) = t.outputs.split_last() {
                for y in hidden {
                    pattern.feed(y.iter());
                }
            }
        }
    }
}

impl<R: Real> AudioEncoder<R> {
    pub fn input_dim(&self) -> usize {
        match self {
            AudioEncoder::Gru(g) => g.input_dim(),
            AudioEncoder::Cnn(c) => c.input_dim(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            AudioEncoder::Gru(g) => g.hidden_dim(),
            AudioEncoder::Cnn(c) => c.embed_dim(),
        }
    }

    /// Feature sequence consumed by masking, plus the backprop trace.
    pub fn forward(&self, spec: ArrayView2<R>) -> Result<(Array2<R>, AudioTrace<R>)> {
        check_input(spec.nrows(), spec.ncols(), self.input_dim())?;
        Ok(match self {
            AudioEncoder::Gru(g) => {
                let traces = g.forward(spec);
                let seq = traces.last().expect("at least one layer").output().to_owned();
                (seq, AudioTrace::Gru(traces))
            }
            AudioEncoder::Cnn(c) => {
                let (seq, trace) = c.forward(spec);
                (seq, AudioTrace::Cnn(trace))
            }
        })
    }

    pub fn backward(&self, trace: &AudioTrace<R>, d_seq: Array2<R>, grad: &mut Self) {
        match (self, trace, grad) {
            (AudioEncoder::Gru(g), AudioTrace::Gru(t), AudioEncoder::Gru(gg)) => g.backward(t, d_seq, gg),
            (AudioEncoder::Cnn(c), AudioTrace::Cnn(t), AudioEncoder::Cnn(gg)) => c.backward(t, d_seq.view(), gg),
            _ => panic!("encoder, trace and gradient variants differ"),
        }
    }
}

impl<R: Real> Parameters<R> for AudioEncoder<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        match self {
            AudioEncoder::Gru(g) => g.params(&join(prefix, "gru"), out),
            AudioEncoder::Cnn(c) => c.params(&join(prefix, "cnn"), out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        match self {
            AudioEncoder::Gru(g) => g.params_mut(&join(prefix, "gru"), out),
            AudioEncoder::Cnn(c) => c.params_mut(&join(prefix, "cnn"), out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::seeded_rng;
    use ndarray::array;

    #[test]
    fn zero_cell() {
        let layer = GruLayer::<f64>::zeros(3, 2);
        let h = gru_cell_step(array![0.0, 0.0, 0.0].view(), array![0.0, 0.0].view(), &layer).unwrap();
        assert_eq!(h, array![0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_takes_candidate() {
        let mut rng = seeded_rng(0, 0, 0);
        let mut layer = GruLayer::<f64>::uniform(3, 2, &mut rng);
        layer.update.bias.fill(1e3);
        let x = array![0.3, -0.2, 0.5];
        let hp = array![0.4, -0.6];
        let h = gru_cell_step(x.view(), hp.view(), &layer).unwrap();
        let hx = concatenate![Axis(0), hp.view(), x.view()];
        let r = layer.reset.forward(hx.view()).mapv(sigmoid);
        let cand = layer
            .candidate
            .forward(concatenate![Axis(0), &r * &hp, x.view()].view())
            .mapv(f64::tanh);
        for i in 0..2 {
            assert!((h[i] - cand[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut rng = seeded_rng(0, 0, 1);
        let mut layer = GruLayer::<f64>::uniform(3, 2, &mut rng);
        layer.update.weight.fill(0.0);
        layer.update.bias.fill(-1e4);
        let hp = array![0.25, -0.5];
        let h = gru_cell_step(array![1.0, 2.0, 3.0].view(), hp.view(), &layer).unwrap();
        assert_eq!(h, hp);
    }

    #[test]
    fn dimension_mismatch() {
        let layer = GruLayer::<f64>::zeros(3, 2);
        assert!(matches!(
            gru_cell_step(array![0.0, 0.0].view(), array![0.0, 0.0].view(), &layer),
            Err(PaseError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sequence_forward_matches_cell_steps() {
        let mut rng = seeded_rng(3, 0, 0);
        let layer = GruLayer::<f64>::uniform(5, 4, &mut rng);
        let x = crate::nn::init::uniform_array::<f64, _, _, _>(&mut rng, (7, 5), 1.0);
        let trace = layer.forward(x.view());
        let mut h = Array1::zeros(4);
        for t in 0..7 {
            h = gru_cell_step(x.row(t), h.view(), &layer).unwrap();
            for i in 0..4 {
                assert!((h[i] - trace.output()[[t, i]]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn cnn_output_dim_independent_of_length() {
        let mut rng = seeded_rng(0, 0, 2);
        let cfg = AudioCnnConfig::default();
        let cnn = AudioCnn::<f64>::he_uniform(10, 16, &cfg, &mut rng);
        for t in [1, 2, 3, 9, 40] {
            let spec = Array2::from_elem((t, 10), 0.5);
            assert_eq!(encode_audio_cnn(spec.view(), &cnn).unwrap().len(), 16);
        }
    }

    #[test]
    fn empty_spectrogram_rejected() {
        let stack = GruStack::<f64>::zeros(4, 3, 2);
        assert!(matches!(
            encode_audio(Array2::zeros((0, 4)).view(), &stack, Pooling::Last),
            Err(PaseError::EmptySequence)
        ));
    }
}
