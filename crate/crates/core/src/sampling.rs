//! Seeded index shuffling shared by the trainer and the subsampler.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`) on a
//! caller-chosen stream. Permutations use the Durstenfeld form of
//! Fisher-Yates: for `i` from `n - 1` down to `1`, draw `j` uniformly in
//! `0..=i` and swap positions `i` and `j`. The uniform draw takes `next_u64`
//! values, rejects any `u >= 2^64 - (2^64 mod (i + 1))`, and returns
//! `u mod (i + 1)`. Only `next_u64` is consumed, so the output depends on
//! nothing but the ChaCha20 keystream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const TRAIN_SHUFFLE_STREAM: u64 = 1;
pub const SUBSAMPLE_STREAM: u64 = 2;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `0..bound` by modulo rejection. `bound` must be > 0.
pub fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
    loop {
        let u = rng.next_u64();
        if u <= zone {
            return u % bound;
        }
    }
}

pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

pub fn permutation(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejection_zone_is_largest_multiple_minus_one() {
        // 2^64 mod 3 == 1, so values up to 2^64 - 2 are accepted
        assert_eq!(u64::MAX - (u64::MAX - 3 + 1) % 3, u64::MAX - 1);
        // powers of two accept everything
        assert_eq!(u64::MAX - (u64::MAX - 8 + 1) % 8, u64::MAX);
        assert_eq!(u64::MAX - (u64::MAX - 1 + 1) % 1, u64::MAX);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = rng_for(5, 0);
        let mut p = permutation(1000, &mut rng);
        p.sort_unstable();
        assert!(p.iter().enumerate().all(|(i, v)| i == *v));
    }

    #[test]
    fn streams_differ() {
        let a = permutation(50, &mut rng_for(5, 1));
        let b = permutation(50, &mut rng_for(5, 2));
        assert_ne!(a, b);
        assert_eq!(a, permutation(50, &mut rng_for(5, 1)));
    }
}
