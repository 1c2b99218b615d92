//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (a client's data, model init, participant
//! sampling, a client's shuffle order in a given round) gets its own
//! ChaCha stream keyed by a 64-bit seed derived from the master seed, so
//! results never depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags. Data streams use the raw client id, so tags live far above
/// any plausible client count.
pub const TAG_MODEL_INIT: u64 = 0x1000_0000_0000_0001;
pub const TAG_PARTICIPANTS: u64 = 0x1000_0000_0000_0002;
pub const TAG_LOCAL_TRAIN: u64 = 0x1000_0000_0000_0003;

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `mix(seed, key) = splitmix64(splitmix64(seed) ^ key)`.
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream for one client's dataset.
pub fn client_data_rng(master: u64, client_id: u32) -> SimRng {
    rng_from_seed(mix(master, client_id as u64))
}

pub fn model_init_rng(master: u64) -> SimRng {
    rng_from_seed(mix(master, TAG_MODEL_INIT))
}

pub fn participants_rng(master: u64, round: u32) -> SimRng {
    rng_from_seed(mix(mix(master, TAG_PARTICIPANTS), round as u64))
}

/// Shuffle stream for `client_id` during `round`. Shared by the in-process
/// orchestrator and remote clients so both modes see identical batches.
pub fn local_train_seed(master: u64, round: u32, client_id: u32) -> u64 {
    mix(
        mix(mix(master, TAG_LOCAL_TRAIN), round as u64),
        client_id as u64,
    )
}
