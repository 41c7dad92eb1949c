//! Seed plumbing. Every stochastic routine takes an explicit `u64` seed and
//! expands it with ChaCha8, so a run is reproducible from its seed alone.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a master seed and a stream index.
///
/// SplitMix64 finalizer; distinct `(seed, stream)` pairs map to distinct
/// streams with no observable correlation, which keeps parallel work
/// (optimizer restarts, benchmark trials) independent yet reproducible.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Labels a seed stream by purpose so independent subsystems never collide.
pub fn derive_seed_tagged(seed: u64, tag: &str, stream: u64) -> u64 {
    // FNV-1a over the tag, folded into the stream index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(seed, h ^ stream)
}
