//! Deterministic splitting of one root seed into independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness; each gets its own stream of the root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainCoefficients = 1,
    TestCoefficients = 2,
    NetworkInit = 3,
    AdaptiveWeights = 4,
    Misc = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(root, stream, index)`.
pub fn child_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix(splitmix(splitmix(root) ^ stream as u64) ^ index)
}

pub fn child_rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(root, stream, index))
}
