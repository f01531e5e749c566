//! Seed derivation for reproducible replication streams.
//!
//! Every Monte-Carlo replication draws from its own Xoshiro256++ stream whose
//! seed is a hash of the master seed and the replication's coordinates, so the
//! result of a replication never depends on which worker ran it.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a master seed together with a list of stream coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix(master ^ 0x9e37_79b9_7f4a_7c15), |h, &c| {
            mix(h.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix(c))
        })
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}
