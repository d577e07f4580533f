//! Counter-based seed streams.
//!
//! Every random draw in the simulator comes from a generator keyed by the
//! global seed plus a small tuple of counters (purpose, client, round,
//! epoch). Keys are mixed with SplitMix64, so the stream a client sees does
//! not depend on how many other clients ran before it or on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinguishes independent uses of the same global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    BaseInit = 1,
    ProfileInit = 2,
    LoraInit = 3,
    Shuffle = 4,
    Partition = 5,
    Blobs = 6,
    TestSplit = 7,
    ProfileShuffle = 8,
    Subset = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a global seed with an ordered list of counters into one 64-bit key.
pub fn derive(global_seed: u64, purpose: Purpose, counters: &[u64]) -> u64 {
    let mut h = splitmix64(global_seed ^ splitmix64(purpose as u64));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(global_seed: u64, purpose: Purpose, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(global_seed, purpose, counters))
}
