use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::init::uniform_array;
use super::params::{push, push_mut, ParamView, ParamViewMut, Parameters};
use crate::real::Real;

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<R> {
    pub weight: Array2<R>,
    pub bias: Array1<R>,
}

impl<R: Real> Linear<R> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn uniform<G: Rng>(input: usize, output: usize, bound: f64, rng: &mut G) -> Self {
        Self {
            weight: uniform_array(rng, (output, input), bound),
            bias: uniform_array(rng, output, bound),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<R>) -> Array1<R> {
        self.weight.dot(&x) + &self.bias
    }

    /// Applies the map to every row of `x` (`n × in` → `n × out`).
    pub fn forward_rows(&self, x: ArrayView2<R>) -> Array2<R> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView1<R>, dy: ArrayView1<R>, grad: &mut Self) -> Array1<R> {
        for (i, &g) in dy.iter().enumerate() {
            if g == R::zero() {
                continue;
            }
            grad.weight
                .row_mut(i)
                .scaled_add(g, &x);
        }
        grad.bias += &dy;
        self.weight.t().dot(&dy)
    }

    pub fn backward_rows(&self, x: ArrayView2<R>, dy: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        ndarray::linalg::general_mat_mul(R::one(), &dy.t(), &x, R::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl<R: Real> Parameters<R> for Linear<R> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>) {
        push(out, prefix, "weight", &self.weight);
        push(out, prefix, "bias", &self.bias);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>) {
        push_mut(out, prefix, "weight", &mut self.weight);
        push_mut(out, prefix, "bias", &mut self.bias);
    }
}
