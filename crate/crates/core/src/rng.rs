//! Seed derivation and per-subject random substreams.
//!
//! All randomness flows from ChaCha8 streams. A seed selects the key and a
//! stream number (subject id, replicate index) selects one of 2^64
//! independent streams under that key, so adding subjects or replicates never
//! perturbs the draws of existing ones.
//!
//! Derived seeds use the SplitMix64 finalizer:
//! `derive_seed(a, b) = splitmix(a ^ splitmix(b + 0x9E3779B97F4A7C15))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep seeds for different purposes apart.
pub const DOMAIN_SIMULATE: u64 = 0x5349_4d55;
pub const DOMAIN_SAMPLE: u64 = 0x5341_4d50;
pub const DOMAIN_REPLICATE: u64 = 0x5245_504c;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Seed of replicate `index` in a study with the given master seed.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    derive_seed(derive_seed(master, DOMAIN_REPLICATE), index)
}

/// Independent generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
