use ndarray::{Array, Dimension, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

/// Uniform(−bound, bound) tensor. Values are drawn in `f64` and then cast, so
/// `f32` and `f64` models built from the same seed agree up to rounding.
pub fn uniform_array<R, G, D, Sh>(rng: &mut G, shape: Sh, bound: f64) -> Array<R, D>
where
    R: Real,
    G: Rng,
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    Array::from_shape_simple_fn(shape, || R::of(rng.random_range(-bound..=bound)))
}

/// SplitMix64 finaliser; turns structured seeds into well-spread ones.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for a `(seed, purpose, index)` triple.
pub fn seeded_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, purpose), index))
}
