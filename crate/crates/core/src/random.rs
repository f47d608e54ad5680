//! Seeded, splittable random source.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 64-bit-seeded ChaCha8 stream.
///
/// Children derived with [`RandomSource::split`] depend only on the parent's
/// seed and the label, never on how many values the parent has drawn, so
/// initialization, data order, dropout and sampling can each be reproduced
/// or varied on their own.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, label: &str) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ splitmix64(fnv1a(label.as_bytes()))))
    }

    pub fn split_indexed(&self, label: &str, index: u64) -> RandomSource {
        let child = self.split(label);
        RandomSource::new(splitmix64(child.seed.wrapping_add(splitmix64(index))))
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_position() {
        let a = RandomSource::new(9);
        let mut b = RandomSource::new(9);
        b.random::<u64>();
        assert_eq!(a.split("init").next_u64(), b.split("init").next_u64());
        assert_ne!(a.split("init").next_u64(), a.split("shuffle").next_u64());
        assert_ne!(
            a.split_indexed("dropout", 0).next_u64(),
            a.split_indexed("dropout", 1).next_u64()
        );
    }
}
