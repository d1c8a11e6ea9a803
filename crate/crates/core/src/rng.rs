//! Seed derivation.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(base_seed, tag, index, sub)`. Streams never depend on evaluation order,
//! so parallel and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub base_seed: u64,
}

impl RngPolicy {
    pub fn new(base_seed: u64) -> Self {
        RngPolicy { base_seed }
    }

    pub fn derive_seed(&self, tag: &str, index: u64, sub: u64) -> u64 {
        let mut h = splitmix64(self.base_seed);
        h = splitmix64(h ^ fnv1a(tag.as_bytes()));
        h = splitmix64(h ^ index);
        splitmix64(h ^ sub.rotate_left(32))
    }

    pub fn stream(&self, tag: &str, index: u64, sub: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(tag, index, sub))
    }

    /// A policy whose base seed is derived from this one; used to hand an
    /// independent seed space to a nested component.
    pub fn child(&self, tag: &str, index: u64) -> RngPolicy {
        RngPolicy::new(self.derive_seed(tag, index, u64::MAX))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
