//! Seed derivation. Every random stream in a run is derived from the master
//! seed by a fixed per-role offset, then decorrelated with SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-role offsets added to the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Benchmark = 0x0100,
    Partition = 0x0200,
    SharedSet = 0x0300,
    Projection = 0x0400,
    Training = 0x0500,
    Probe = 0x0600,
    Upgrade = 0x0700,
    Uniformity = 0x0800,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, role: Role) -> u64 {
    splitmix64(master.wrapping_add(role as u64))
}

/// A sub-stream of `seed` indexed by `index` (participant id, round, ...).
pub fn substream(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5EED)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
