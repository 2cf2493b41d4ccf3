//! Counter-based seed derivation.
//!
//! Every random draw in an experiment is keyed by a path such as
//! (procedure, in-set, element), so results do not depend on scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of counters.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base.wrapping_add(GOLDEN)), |acc, &k| {
        splitmix64(acc ^ splitmix64(k.wrapping_add(GOLDEN)))
    })
}
