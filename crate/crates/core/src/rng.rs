//! Seed derivation for reproducible parallel streams.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose
//! seed is derived from a master seed and a path of integer labels
//! (replication index, tree index, chunk index, ...). Work split across
//! threads therefore never shares a stream, and results do not depend on
//! the number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels that separate the purposes a master seed is used for.
pub mod label {
    pub const DATA: u64 = 0x6461_7461;
    pub const FOREST: u64 = 0x666f_7265;
    pub const TREE: u64 = 0x7472_6565;
    pub const POISSON: u64 = 0x706f_6973;
    pub const PAIRS: u64 = 0x7061_6972;
    pub const SUPREMA: u64 = 0x7375_7072;
    pub const PSI: u64 = 0x7073_6900;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of labels into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// An RNG for the stream identified by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
