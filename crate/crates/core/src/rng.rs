//! Seed plumbing.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`.
//! Child seeds are derived from a parent seed and a string tag with
//! splitmix64, so adding a new consumer (an arm, a fold) never shifts the
//! randomness any other consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One round of the splitmix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a, 64 bit.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `derive_seed(parent, tag) = splitmix64(splitmix64(parent) ^ fnv1a(tag))`.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(parent) ^ tag_hash(tag))
}

/// Same as [`derive_seed`] with an integer index appended to the tag.
pub fn derive_seed_indexed(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(parent, tag) ^ index)
}
