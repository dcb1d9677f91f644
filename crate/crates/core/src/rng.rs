//! Seeded random streams partitioned per path.
//!
//! A [`RandomStream`] is a `(seed, key)` pair. Each path index selects its own
//! ChaCha8 stream, so the draws for path `b` never depend on how many other
//! paths exist or the order in which they are generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, key: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream, e.g. per purpose or per iteration.
    pub fn substream(&self, label: u64) -> Self {
        Self { seed: self.seed, key: splitmix64(self.key ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))) }
    }

    /// Generator for one path. Identical `(seed, key, path)` yields identical draws.
    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed) ^ self.key);
        rng.set_stream(path);
        rng
    }

    /// Single generator for work that is not partitioned by path.
    pub fn rng(&self) -> ChaCha8Rng {
        self.path_rng(u64::MAX)
    }
}

pub mod labels {
    pub const INITIAL_STATES: u64 = 1;
    pub const INCREMENTS: u64 = 2;
    pub const WEIGHTS: u64 = 3;
    pub const TRAINING: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const EVALUATION: u64 = 6;
    pub const ORACLE: u64 = 7;
}
