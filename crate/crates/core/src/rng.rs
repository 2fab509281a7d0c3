//! Deterministic substream derivation.
//!
//! Every source of randomness in the crate is a pure function of
//! `(master_seed, stream_id)`. Stream 0 is the "driver" stream of a run;
//! parallel workers get their own streams so results do not depend on
//! evaluation order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

/// RNG for substream `stream` of master seed `seed`.
pub fn substream(seed: u64, stream: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child master seed, e.g. one per simulation replicate. SplitMix64
/// finalizer over (seed, label) so children are well separated.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
