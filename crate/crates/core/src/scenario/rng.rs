//! Counter-based uniform draws.
//!
//! Draw `(stream, lane, index)` under `seed` is the `index`-th 64-bit output of
//! ChaCha8 keyed by the little-endian seed (zero padded to 32 bytes), with the
//! ChaCha stream id set to `stream` and the word position set to
//! `(lane << 32 | index) * 2`. The 64-bit output `x` maps to `(x >> 11) * 2^-53`
//! in `[0, 1)`. Any draw can be computed without generating the ones before
//! it, so scenarios and gases can be sampled in any order.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: [u8; 32],
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        CounterRng { key }
    }

    fn positioned(&self, stream: u64, lane: u64, index: u64) -> ChaCha8Rng {
        debug_assert!(lane < 1 << 32 && index < 1 << 32);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(lane << 32 | index) * 2);
        rng
    }

    pub fn uniform(&self, stream: u64, lane: u64, index: u64) -> f64 {
        to_unit(self.positioned(stream, lane, index).next_u64())
    }

    /// Consecutive draws `index, index + 1, ...` into `out`.
    pub fn fill_uniform(&self, stream: u64, lane: u64, index: u64, out: &mut [f64]) {
        let mut rng = self.positioned(stream, lane, index);
        for v in out {
            *v = to_unit(rng.next_u64());
        }
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let rng = CounterRng::new(42);
        let mut seq = vec![0.0; 64];
        rng.fill_uniform(3, 1, 10, &mut seq);
        for (k, v) in seq.iter().enumerate() {
            assert_eq!(*v, rng.uniform(3, 1, 10 + k as u64));
        }
    }

    #[test]
    fn keys_are_independent() {
        let rng = CounterRng::new(42);
        let a = rng.uniform(0, 0, 0);
        assert_ne!(a, rng.uniform(1, 0, 0));
        assert_ne!(a, rng.uniform(0, 1, 0));
        assert_ne!(a, rng.uniform(0, 0, 1));
        assert_ne!(a, CounterRng::new(43).uniform(0, 0, 0));
    }

    #[test]
    fn draws_are_in_unit_interval() {
        let rng = CounterRng::new(7);
        let mut v = vec![0.0; 10_000];
        rng.fill_uniform(0, 0, 0, &mut v);
        assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }
}
