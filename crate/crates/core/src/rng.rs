//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit stream. Independent
//! sub-streams are derived from a parent seed plus a tag path so that
//! results do not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ndarray::Array2;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `seed` and a sequence of integer tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &tag| splitmix(acc ^ splitmix(tag)))
}

pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    seeded(derive(seed, tags))
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn normal_scaled(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    standard_normal(rows, cols, rng) * std
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, &[1, 2]).gen();
        let b: u64 = substream(7, &[1, 2]).gen();
        let c: u64 = substream(7, &[2, 1]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive(0, &[]), derive(1, &[]));
    }
}
