//! Counter-addressed random streams.
//!
//! A [`SeedTree`] node holds a 64-bit seed. `stream(i)` returns a ChaCha8
//! generator keyed by that seed with stream id `i`, so the `i`-th replicate's
//! draws depend only on `(seed, i)` and never on scheduling. `child(i)`
//! derives the seed of a nested node by a SplitMix64 finalisation of
//! `seed + (i + 1)·0x9E3779B97F4A7C15`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    seed: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, index: u64) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    pub fn child(&self, index: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN))),
        }
    }
}
