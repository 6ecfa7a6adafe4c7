//! Seeded randomness. A single run seed is split into independent streams,
//! one per consumer, so that adding draws in one module never shifts the
//! sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the stream named `key`.
    pub fn rng(&self, key: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(key.as_bytes()));
        rng
    }

    /// A child stream, e.g. one per training step.
    pub fn child(&self, key: &str, index: u64) -> SeedStream {
        let h = fnv1a(key.as_bytes()) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        SeedStream {
            seed: self.seed.rotate_left(17) ^ h,
        }
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
