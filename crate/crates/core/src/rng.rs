//! Seed derivation. Every consumer of randomness gets its own ChaCha stream
//! keyed by `(seed, purpose, index)`, so adding a consumer never shifts the
//! values another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that own independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    VisionEncoder = 1,
    LanguageEncoder = 2,
    Fusion = 3,
    Adapters = 4,
    Lora = 5,
    TrainSplit = 6,
    ValSplit = 7,
    Batches = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream as u64) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
