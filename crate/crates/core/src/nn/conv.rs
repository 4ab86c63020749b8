use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rand::Rng;

use super::init::uniform_array;
use super::params::{push, push_mut, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

/// Output length of one convolution axis, `None` when the window does not fit.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if input == 0 || stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of a 2-D convolution, independent of its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn output_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_len(h, self.kernel.0, self.stride.0, self.padding.0)?,
            conv_out_len(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// Lowers `x` (`C × H × W`) into a `(C·kh·kw) × (Ho·Wo)` patch matrix.
pub fn im2col<R: Real>(x: ArrayView3<R>, g: &ConvGeometry, ho: usize, wo: usize) -> Array2<R> {
    let (c, h, w) = x.dim();
    let (kh, kw) = g.kernel;
    let mut cols = Array2::<R>::zeros((c * kh * kw, ho * wo));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst_row = &mut dst[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi, off) = column_range(w, wo, kj, g.stride.1, g.padding.1);
                for oy in 0..ho {
                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[(ci * h + iy as usize) * w..][..w];
                    let out = &mut dst_row[oy * wo..(oy + 1) * wo];
                    if g.stride.1 == 1 {
                        let a = (lo as isize + off) as usize;
                        out[lo..hi].copy_from_slice(&src_row[a..a + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = src_row[(ox as isize * g.stride.1 as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub fn col2im<R: Real>(
    cols: &Array2<R>,
    shape: (usize, usize, usize),
    g: &ConvGeometry,
    ho: usize,
    wo: usize,
) -> Array3<R> {
    let (c, h, w) = shape;
    let (kh, kw) = g.kernel;
    let mut x = Array3::<R>::zeros(shape);
    let dst = x.as_slice_mut().expect("fresh array");
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src_row = &src[row * ho * wo..(row + 1) * ho * wo];
                let (lo, hi, off) = column_range(w, wo, kj, g.stride.1, g.padding.1);
                for oy in 0..ho {
                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let out = &mut dst[(ci * h + iy as usize) * w..][..w];
                    let inp = &src_row[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        let ix = (ox as isize * g.stride.1 as isize + off) as usize;
                        out[ix] += inp[ox];
                    }
                }
            }
        }
    }
    x
}

/// Output columns `lo..hi` whose input column `ox·stride + off` lies inside `0..w`.
fn column_range(w: usize, wo: usize, kj: usize, stride: usize, pad: usize) -> (usize, usize, isize) {
    let off = kj as isize - pad as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let span = w as isize - off;
    let hi = if span <= 0 {
        0
    } else {
        (span as usize).div_ceil(stride).min(wo)
    };
    (lo.min(hi), hi, off)
}

/// 2-D convolution over a single `C × H × W` input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<R> {
    /// `out × in × kh × kw`
    pub weight: Array4<R>,
    pub bias: Array1<R>,
    pub geometry: ConvGeometry,
}

impl<R: Real> Conv2d<R> {
    pub fn zeros(in_ch: usize, out_ch: usize, geometry: ConvGeometry) -> Self {
        let (kh, kw) = geometry.kernel;
        Self {
            weight: Array4::zeros((out_ch, in_ch, kh, kw)),
            bias: Array1::zeros(out_ch),
            geometry,
        }
    }

    /// He-uniform weights (variance `2 / fan_in`); bias uniform(±0.05/√fan_in).
    /// Non-zero so constant input regions do not sit exactly on a ReLU kink,
    /// small so that biases do not swamp the input signal in a deep stack.
    pub fn he_uniform<G: Rng>(in_ch: usize, out_ch: usize, geometry: ConvGeometry, rng: &mut G) -> Self {
        let (kh, kw) = geometry.kernel;
        let fan_in = (in_ch * kh * kw) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            weight: uniform_array(rng, (out_ch, in_ch, kh, kw), bound),
            bias: uniform_array(rng, out_ch, 0.05 / fan_in.sqrt()),
            geometry,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, R> {
        let (o, i, kh, kw) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * kh * kw))
            .expect("contiguous weight")
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.geometry.output_shape(h, w)
    }

    /// Direct loops pay off on wide rows with unit width stride; narrow or
    /// strided inputs go through im2col + GEMM.
    fn direct(&self, input_width: usize) -> bool {
        self.geometry.stride.1 == 1 && input_width >= 16
    }

    /// Panics if the input does not fit; callers validate shapes up front.
    pub fn forward(&self, x: ArrayView3<R>) -> Array3<R> {
        if self.direct(x.dim().2) {
            self.forward_direct(x)
        } else {
            self.forward_lowered(x)
        }
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: ArrayView3<R>,
        dy: ArrayView3<R>,
        grad: &mut Self,
        need_input_grad: bool,
    ) -> Option<Array3<R>> {
        if self.direct(x.dim().2) {
            self.backward_direct(x, dy, grad, need_input_grad)
        } else {
            self.backward_lowered(x, dy, grad, need_input_grad)
        }
    }

    pub fn forward_lowered(&self, x: ArrayView3<R>) -> Array3<R> {
        let (_, h, w) = x.dim();
        let (ho, wo) = self
            .output_shape(h, w)
            .expect("input validated against layer geometry");
        let cols = im2col(x, &self.geometry, ho, wo);
        let mut y = self.weight_matrix().dot(&cols);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((self.out_channels(), ho, wo))
            .expect("contiguous output")
    }

    pub fn backward_lowered(
        &self,
        x: ArrayView3<R>,
        dy: ArrayView3<R>,
        grad: &mut Self,
        need_input_grad: bool,
    ) -> Option<Array3<R>> {
        let (c, h, w) = x.dim();
        let (o, ho, wo) = dy.dim();
        let cols = im2col(x, &self.geometry, ho, wo);
        let dy = dy.as_standard_layout();
        let dy2 = dy
            .view()
            .into_shape_with_order((o, ho * wo))
            .expect("contiguous gradient");
        {
            let (go, gi, gkh, gkw) = grad.weight.dim();
            let mut gw = grad
                .weight
                .view_mut()
                .into_shape_with_order((go, gi * gkh * gkw))
                .expect("contiguous weight grad");
            ndarray::linalg::general_mat_mul(R::one(), &dy2, &cols.t(), R::one(), &mut gw);
        }
        grad.bias += &dy2.sum_axis(Axis(1));
        if !need_input_grad {
            return None;
        }
        let dcols = self.weight_matrix().t().dot(&dy2);
        Some(col2im(&dcols, (c, h, w), &self.geometry, ho, wo))
    }

    /// Calls `f(weight_index, input_row_start, output_row_start, len)` for
    /// every contiguous row segment touched by one tap. Width stride must be 1.
    fn for_each_tap_row(&self, (c, h, w): (usize, usize, usize), (ho, wo): (usize, usize), mut f: impl FnMut(usize, usize, usize, usize)) {
        let (o, _, kh, kw) = self.weight.dim();
        let g = self.geometry;
        for oc in 0..o {
            for ic in 0..c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wi = ((oc * c + ic) * kh + ki) * kw + kj;
                        let (lo, hi, off) = column_range(w, wo, kj, 1, g.padding.1);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = (ic * h + iy as usize) * w + (lo as isize + off) as usize;
                            let dst = (oc * ho + oy) * wo + lo;
                            f(wi, src, dst, hi - lo);
                        }
                    }
                }
            }
        }
    }

    pub fn forward_direct(&self, x: ArrayView3<R>) -> Array3<R> {
        let (c, h, w) = x.dim();
        let (ho, wo) = self
            .output_shape(h, w)
            .expect("input validated against layer geometry");
        let o = self.out_channels();
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let wts = self.weight.as_slice().expect("contiguous weight");
        let mut y = Array3::<R>::zeros((o, ho, wo));
        for (mut plane, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            plane.fill(b);
        }
        let dst = y.as_slice_mut().expect("fresh array");
        self.for_each_tap_row((c, h, w), (ho, wo), |wi, s, d, n| {
            axpy(wts[wi], &src[s..s + n], &mut dst[d..d + n]);
        });
        y
    }

    pub fn backward_direct(
        &self,
        x: ArrayView3<R>,
        dy: ArrayView3<R>,
        grad: &mut Self,
        need_input_grad: bool,
    ) -> Option<Array3<R>> {
        let (c, h, w) = x.dim();
        let (_, ho, wo) = dy.dim();
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let dy = dy.as_standard_layout();
        let g = dy.as_slice().expect("standard layout");
        {
            let gw = grad.weight.as_slice_mut().expect("contiguous weight grad");
            self.for_each_tap_row((c, h, w), (ho, wo), |wi, s, d, n| {
                gw[wi] += dot(&g[d..d + n], &src[s..s + n]);
            });
        }
        for (oc, gb) in grad.bias.iter_mut().enumerate() {
            *gb += g[oc * ho * wo..(oc + 1) * ho * wo].iter().copied().sum::<R>();
        }
        if !need_input_grad {
            return None;
        }
        let wts = self.weight.as_slice().expect("contiguous weight");
        let mut dx = Array3::<R>::zeros((c, h, w));
        let out = dx.as_slice_mut().expect("fresh array");
        self.for_each_tap_row((c, h, w), (ho, wo), |wi, s, d, n| {
            axpy(wts[wi], &g[d..d + n], &mut out[s..s + n]);
        });
        Some(dx)
    }
}

#[inline]
fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eight-lane accumulation so the reduction vectorises.
#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = R::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    acc.iter().copied().sum::<R>() + tail
}

impl<R: Real> Parameters<R> for Conv2d<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        push(out, prefix, "weight", &self.weight);
        push(out, prefix, "bias", &self.bias);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        push_mut(out, prefix, "weight", &mut self.weight);
        push_mut(out, prefix, "bias", &mut self.bias);
    }
}
