use ndarray::{Array, Dimension};

use crate::real::Real;

/// Read-only view of one named parameter tensor.
pub struct ParamView<'a, R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [R],
}

pub struct ParamViewMut<'a, R> {
    pub name: String,
    pub data: &'a mut [R],
}

/// Anything that owns trainable tensors.
///
/// Implementations must visit tensors in the same order in `params` and
/// `params_mut`; gradient containers are values of the same type, so the
/// orders line up element for element.
pub trait Parameters<R: Real> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, R>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, R>>);

    fn collect_params(&self) -> Vec<ParamView<'_, R>> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn collect_params_mut(&mut self) -> Vec<ParamViewMut<'_, R>> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.collect_params().iter().map(|p| p.data.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for p in z.collect_params_mut() {
            p.data.fill(R::zero());
        }
        z
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.collect_params();
        for (dst, src) in self.collect_params_mut().into_iter().zip(src) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: R) {
        for p in self.collect_params_mut() {
            for v in p.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.collect_params()
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn push<'a, R: Real, D: Dimension>(
    out: &mut Vec<ParamView<'a, R>>,
    prefix: &str,
    name: &str,
    a: &'a Array<R, D>,
) {
    out.push(ParamView {
        name: join(prefix, name),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are stored contiguously"),
    });
}

pub fn push_mut<'a, R: Real, D: Dimension>(
    out: &mut Vec<ParamViewMut<'a, R>>,
    prefix: &str,
    name: &str,
    a: &'a mut Array<R, D>,
) {
    out.push(ParamViewMut {
        name: join(prefix, name),
        data: a.as_slice_mut().expect("parameters are stored contiguously"),
    });
}

/// Copy every tensor of `src` into `dst`, converting the element type.
/// Both must have identical structure.
pub fn copy_params<A, B, RA, RB>(src: &A, dst: &mut B)
where
    RA: Real,
    RB: Real,
    A: Parameters<RA>,
    B: Parameters<RB>,
{
    let src = src.collect_params();
    let dst = dst.collect_params_mut();
    assert_eq!(src.len(), dst.len(), "parameter structure differs");
    for (s, d) in src.into_iter().zip(dst) {
        assert_eq!(s.data.len(), d.data.len(), "tensor {} differs in size", s.name);
        for (x, y) in s.data.iter().zip(d.data.iter_mut()) {
            *y = RB::of(x.f64());
        }
    }
}
