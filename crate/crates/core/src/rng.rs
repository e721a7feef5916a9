//! Named, seeded random streams.
//!
//! A stream is a ChaCha8 generator whose 256-bit key is derived from the
//! kernel's root seed and the stream's name. Two components that ask for
//! different names never share a generator, and the mapping is a pure
//! function of `(root seed, name)` so it is stable across runs and platforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A deterministic random stream identified by name.
#[derive(Clone, Debug)]
pub struct RngStream {
    id: String,
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, id: &str) -> Self {
        let mut key = [0u8; 32];
        let mut state = root_seed ^ fnv1a(id.as_bytes());
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            id: id.to_owned(),
            seed: root_seed,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root_seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[low, high)`; returns `low` when the range is empty.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        if high <= low {
            return low;
        }
        low + (high - low) * self.unit()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        // Lemire's widening multiply with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.inner.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed, e.g. one per rollout worker.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut s = root ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    splitmix64(&mut s)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, id: &str) -> Vec<u64> {
        let mut s = RngStream::new(seed, id);
        (0..1000).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_seed_and_id_repeat() {
        assert_eq!(draws(7, "flow-start"), draws(7, "flow-start"));
    }

    #[test]
    fn ids_and_seeds_separate_streams() {
        assert_ne!(draws(7, "a"), draws(7, "b"));
        assert_ne!(draws(1, "x"), draws(2, "x"));
    }

    #[test]
    fn frozen_first_draw() {
        // Guards against accidental changes to the key derivation, which
        // would silently change every seeded scenario.
        assert_eq!(RngStream::new(0, "").next_u64(), 13_829_665_114_596_604_028);
        assert_eq!(RngStream::new(42, "params").next_u64(), 459_839_951_482_711_870);
        assert_eq!(derive_seed(1, 2), 694_183_512_642_609_129);
    }

    #[test]
    fn below_stays_in_range() {
        let mut s = RngStream::new(3, "below");
        for n in 1..50 {
            for _ in 0..20 {
                assert!(s.below(n) < n);
            }
        }
    }

    #[test]
    fn unit_in_half_open_interval() {
        let mut s = RngStream::new(9, "u");
        for _ in 0..10_000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
