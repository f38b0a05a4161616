//! Child-seed derivation.
//!
//! Every random stream in a run is keyed by `(master_seed, purpose, indices)`.
//! The purpose tag is hashed with FNV-1a, then the master seed, tag hash and
//! each index are folded through the SplitMix64 finalizer. Streams for one
//! purpose therefore never shift when another purpose draws more or fewer
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod purpose {
    pub const DATAGEN: &str = "datagen";
    pub const PLACEMENT: &str = "placement";
    pub const BATTERY: &str = "battery";
    pub const SPLIT: &str = "split";
    pub const MODEL_INIT: &str = "model-init";
    pub const TRAINING: &str = "training";
    pub const SELECTION: &str = "selection";
    pub const DIVERSITY: &str = "diversity";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ fnv1a(tag));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn rng(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, indices))
}
