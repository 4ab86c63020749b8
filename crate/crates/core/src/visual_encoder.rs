//! Lip-window → visual embedding via a 14-row convolutional stack.
//!
//! ReLU follows every convolution. Residual blocks compute
//! `ReLU(x + conv2(ReLU(conv1(x))))`.

use ndarray::{Array1, Array2, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LipWindow;
use crate::error::{PaseError, Result};
use crate::nn::conv::conv_out_len;
use crate::nn::params::join;
use crate::nn::{relu, Conv2d, ReluPattern, ConvGeometry, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

pub const INPUT_CHANNELS: usize = 15;
pub const INPUT_SIZE: usize = 96;
pub const FULL_EMBED_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ResidualBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    /// 1-based position in the stack.
    pub row: usize,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvLayerSpec {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

const fn row(
    row: usize,
    kind: LayerKind,
    in_ch: usize,
    out_ch: usize,
    k: (usize, usize),
    s: (usize, usize),
    p: usize,
) -> ConvLayerSpec {
    ConvLayerSpec {
        row,
        kind,
        in_ch,
        out_ch,
        kernel: k,
        stride: s,
        padding: (p, p),
    }
}

use LayerKind::{Conv, ResidualBlock as Res};

/// The full-width lip feature extractor, top to bottom.
pub const VISUAL_STACK: [ConvLayerSpec; 14] = [
    row(1, Conv, 15, 32, (7, 7), (1, 1), 3),
    row(2, Conv, 32, 64, (5, 5), (1, 2), 1),
    row(3, Res, 64, 64, (3, 3), (1, 1), 1),
    row(4, Res, 64, 64, (3, 3), (1, 1), 1),
    row(5, Conv, 64, 128, (3, 3), (2, 2), 1),
    row(6, Res, 128, 128, (3, 3), (1, 1), 1),
    row(7, Res, 128, 128, (3, 3), (1, 1), 1),
    row(8, Conv, 128, 256, (3, 3), (2, 2), 1),
    row(9, Res, 256, 256, (3, 3), (1, 1), 1),
    row(10, Conv, 256, 512, (3, 3), (2, 2), 1),
    row(11, Res, 512, 512, (3, 3), (1, 1), 1),
    row(12, Conv, 512, 512, (3, 3), (2, 2), 1),
    row(13, Conv, 512, 512, (3, 3), (4, 1), 0),
    row(14, Conv, 512, 512, (1, 1), (1, 1), 0),
];

/// The stack with every channel count `c` (except the 15 input channels)
/// replaced by `max(1, c · embed_dim / 512)`. Kernels and strides are kept.
pub fn scaled_stack(embed_dim: usize) -> Vec<ConvLayerSpec> {
    let scale = |c: usize| (c * embed_dim / FULL_EMBED_DIM).max(1);
    VISUAL_STACK
        .iter()
        .map(|s| ConvLayerSpec {
            in_ch: if s.row == 1 { s.in_ch } else { scale(s.in_ch) },
            out_ch: scale(s.out_ch),
            ..*s
        })
        .collect()
}

pub fn conv_output_shape(spec: &ConvLayerSpec, in_shape: (usize, usize)) -> Result<(usize, usize)> {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    match (
        conv_out_len(in_shape.0, kh, sh, ph),
        conv_out_len(in_shape.1, kw, sw, pw),
    ) {
        (Some(h), Some(w)) if in_shape.0 > 0 && in_shape.1 > 0 => Ok((h, w)),
        _ => Err(PaseError::InputTooSmall { layer: spec.row }),
    }
}

/// Output shape after every layer, starting with the input shape.
pub fn shape_chain(stack: &[ConvLayerSpec], input: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    let mut shapes = vec![input];
    for spec in stack {
        let next = conv_output_shape(spec, *shapes.last().expect("non-empty"))?;
        shapes.push(next);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, PartialEq)]
pub enum VisualLayer<R> {
    Conv(Conv2d<R>),
    Residual(Conv2d<R>, Conv2d<R>),
}

#[derive(Debug, Clone)]
enum LayerTrace<R> {
    Conv {
        input: Array3<R>,
        pre: Array3<R>,
    },
    Residual {
        input: Array3<R>,
        inner_pre: Array3<R>,
        inner: Array3<R>,
        pre: Array3<R>,
    },
}

#[derive(Debug, Clone)]
pub struct VisualTrace<R> {
    layers: Vec<LayerTrace<R>>,
}

impl<R: Real> VisualTrace<R> {
    pub fn fold_relu_pattern(&self, pattern: &mut ReluPattern) {
        for layer in &self.layers {
            match layer {
                LayerTrace::Conv { pre, .. } => pattern.feed(pre.iter()),
                LayerTrace::Residual { inner_pre, pre, .. } => {
                    pattern.feed(inner_pre.iter());
                    pattern.feed(pre.iter());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoder<R> {
    pub specs: Vec<ConvLayerSpec>,
    pub layers: Vec<VisualLayer<R>>,
}

fn relu_mask<R: Real>(grad: &mut Array3<R>, pre: &Array3<R>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= R::zero() {
            *g = R::zero();
        }
    });
}

impl<R: Real> VisualEncoder<R> {
    fn build(specs: Vec<ConvLayerSpec>, mut make: impl FnMut(usize, usize, ConvGeometry) -> Conv2d<R>) -> Self {
        let layers = specs
            .iter()
            .map(|s| match s.kind {
                LayerKind::Conv => VisualLayer::Conv(make(s.in_ch, s.out_ch, s.geometry())),
                LayerKind::ResidualBlock => {
                    VisualLayer::Residual(make(s.in_ch, s.out_ch, s.geometry()), make(s.out_ch, s.out_ch, s.geometry()))
                }
            })
            .collect();
        Self { specs, layers }
    }

    /// He-uniform weights with small uniform biases.
    pub fn he_uniform<G: Rng>(specs: Vec<ConvLayerSpec>, rng: &mut G) -> Self {
        Self::build(specs, |i, o, g| Conv2d::he_uniform(i, o, g, rng))
    }

    pub fn zeros(specs: Vec<ConvLayerSpec>) -> Self {
        Self::build(specs, Conv2d::zeros)
    }

    pub fn embed_dim(&self) -> usize {
        self.specs.last().map_or(0, |s| s.out_ch)
    }

    fn check_input(&self, dim: (usize, usize, usize)) -> Result<()> {
        let (c, h, w) = dim;
        if c != self.specs[0].in_ch {
            return Err(PaseError::DimensionMismatch(format!(
                "window has {c} channels, encoder expects {}",
                self.specs[0].in_ch
            )));
        }
        let chain = shape_chain(&self.specs, (h, w))?;
        if chain.last() != Some(&(1, 1)) {
            return Err(PaseError::DimensionMismatch(format!(
                "a {h}×{w} window ends at {:?}, not 1×1",
                chain.last().expect("non-empty")
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView3<R>) -> Result<(Array1<R>, VisualTrace<R>)> {
        self.check_input(x.dim())?;
        let mut trace = VisualTrace {
            layers: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.to_owned();
        for layer in &self.layers {
            match layer {
                VisualLayer::Conv(conv) => {
                    let pre = conv.forward(cur.view());
                    let out = pre.mapv(relu);
                    trace.layers.push(LayerTrace::Conv { input: cur, pre });
                    cur = out;
                }
                VisualLayer::Residual(c1, c2) => {
                    let inner_pre = c1.forward(cur.view());
                    let inner = inner_pre.mapv(relu);
                    let pre = &cur + &c2.forward(inner.view());
                    let out = pre.mapv(relu);
                    trace.layers.push(LayerTrace::Residual {
                        input: cur,
                        inner_pre,
                        inner,
                        pre,
                    });
                    cur = out;
                }
            }
        }
        let e = cur.len();
        Ok((cur.into_shape_with_order(e).expect("1×1 output"), trace))
    }

    pub fn backward(&self, trace: &VisualTrace<R>, d_out: Array1<R>, grad: &mut Self) {
        let e = d_out.len();
        let mut d = d_out.into_shape_with_order((e, 1, 1)).expect("1×1 output");
        for (i, (layer, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let need = i > 0;
            match (layer, t, &mut grad.layers[i]) {
                (VisualLayer::Conv(conv), LayerTrace::Conv { input, pre }, VisualLayer::Conv(g)) => {
                    relu_mask(&mut d, pre);
                    match conv.backward(input.view(), d.view(), g, need) {
                        Some(dx) => d = dx,
                        None => return,
                    }
                }
                (
                    VisualLayer::Residual(c1, c2),
                    LayerTrace::Residual {
                        input,
                        inner_pre,
                        inner,
                        pre,
                    },
                    VisualLayer::Residual(g1, g2),
                ) => {
                    relu_mask(&mut d, pre);
                    let mut d_inner = c2.backward(inner.view(), d.view(), g2, true).expect("input grad requested");
                    relu_mask(&mut d_inner, inner_pre);
                    match c1.backward(input.view(), d_inner.view(), g1, need) {
                        Some(dx) => d = d + dx,
                        None => return,
                    }
                }
                _ => panic!("encoder, trace and gradient structure differ"),
            }
        }
    }
}

impl<R: Real> Parameters<R> for VisualEncoder<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        for (i, l) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("row{}", i + 1));
            match l {
                VisualLayer::Conv(c) => c.params(&p, out),
                VisualLayer::Residual(a, b) => {
                    a.params(&join(&p, "conv1"), out);
                    b.params(&join(&p, "conv2"), out);
                }
            }
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("row{}", i + 1));
            match l {
                VisualLayer::Conv(c) => c.params_mut(&p, out),
                VisualLayer::Residual(a, b) => {
                    a.params_mut(&join(&p, "conv1"), out);
                    b.params_mut(&join(&p, "conv2"), out);
                }
            }
        }
    }
}

pub fn window_tensor<R: Real>(window: &LipWindow) -> Array3<R> {
    window.pixels.mapv(|v| R::of(v as f64))
}

pub fn encode_window<R: Real>(window: &LipWindow, encoder: &VisualEncoder<R>) -> Result<Array1<R>> {
    Ok(encoder.forward(window_tensor::<R>(window).view())?.0)
}

/// One row per window (`T_v × E`).
pub fn encode_frame_sequence<R: Real>(windows: &[LipWindow], encoder: &VisualEncoder<R>) -> Result<Array2<R>> {
    if windows.is_empty() {
        return Err(PaseError::EmptySequence);
    }
    let mut out = Array2::zeros((windows.len(), encoder.embed_dim()));
    for (i, w) in windows.iter().enumerate() {
        out.row_mut(i).assign(&encode_window(w, encoder)?);
    }
    Ok(out)
}
