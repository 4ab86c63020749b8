//! Minimal tensor building blocks with hand-written backward passes.

pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod params;

pub use conv::{Conv2d, ConvGeometry};
pub use linear::Linear;
pub use params::{copy_params, ParamView, ParamViewMut, Parameters};

use crate::real::Real;

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[inline]
pub fn relu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        R::zero()
    }
}

/// Fingerprint of which ReLU pre-activations are positive. Two evaluations
/// with equal fingerprints lie in the same linear region of every ReLU.
#[derive(Debug, Clone, Default)]
pub struct ReluPattern {
    hasher: std::collections::hash_map::DefaultHasher,
}

impl ReluPattern {
    pub fn feed<'a, R: Real + 'a>(&mut self, pre: impl IntoIterator<Item = &'a R>) {
        use std::hash::Hasher;
        let mut word = 0u64;
        let mut bits = 0u32;
        for &p in pre {
            word = (word << 1) | u64::from(p > R::zero());
            bits += 1;
            if bits == 64 {
                self.hasher.write_u64(word);
                word = 0;
                bits = 0;
            }
        }
        self.hasher.write_u64(word);
        self.hasher.write_u32(bits);
    }

    pub fn finish(&self) -> u64 {
        use std::hash::Hasher;
        self.hasher.finish()
    }
}
