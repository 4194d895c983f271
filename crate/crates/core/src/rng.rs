//! Per-trajectory random streams.
//!
//! Every trajectory draws from a ChaCha8 keystream keyed by the run seed and
//! selected by the trajectory index as the stream id. ChaCha is counter based,
//! so stream `i` is the same no matter which worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrajectoryRng = ChaCha8Rng;

/// Expands a 64-bit seed into a 256-bit key with SplitMix64.
fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Random stream for trajectory `index` of a run seeded with `seed`.
pub fn split(seed: u64, index: u64) -> TrajectoryRng {
    let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
    rng.set_stream(index);
    rng
}

/// Independent stream for model construction (random operators), kept apart
/// from trajectory streams by a distinct key.
pub fn model_stream(seed: u64) -> TrajectoryRng {
    ChaCha8Rng::from_seed(expand_seed(seed ^ 0x6D6F_6465_6C5F_7267))
}
