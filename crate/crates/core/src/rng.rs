//! Counter-based seeding.
//!
//! Every random draw made by an optimizer is keyed by the triple
//! `(experiment seed, replication index, iteration index)`. The first two
//! pick a ChaCha key, the iteration index selects the stream, so draws for
//! different iterations never overlap and any single iteration can be
//! regenerated without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one iteration of one replication.
pub fn iteration_rng(seed: u64, replication: u64, iteration: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(replication.wrapping_add(0x5EED)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(iteration);
    rng
}

/// Generator for setup work (problem construction, probe points) that is
/// not tied to an iteration.
pub fn setup_rng(seed: u64) -> StreamRng {
    iteration_rng(seed, u64::MAX, u64::MAX)
}
