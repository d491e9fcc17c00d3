//! Named random substreams.
//!
//! Every random draw in the engine comes from a generator keyed by the global
//! seed plus a list of labels (stage name, query id, path id, ...), so any
//! single draw can be reproduced without replaying the draws before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Builder for a substream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(splitmix(seed))
    }

    pub fn label(self, s: &str) -> Self {
        Stream(splitmix(self.0 ^ fnv(s.as_bytes())))
    }

    pub fn index(self, i: u64) -> Self {
        Stream(splitmix(self.0.rotate_left(17) ^ splitmix(i)))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Seed of the named child stream, for handing to a component.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    Stream::new(seed).label(label).seed()
}

/// Stable 32-bit id for a token string.
pub fn token_id(token: &str) -> u32 {
    let h = fnv(token.as_bytes());
    (h ^ (h >> 32)) as u32
}
