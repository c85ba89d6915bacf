//! Per-task seed derivation.
//!
//! `derive_seed(master, [a, b, ...])` folds each tag into a SplitMix64 state:
//! `h = mix(master)`, then `h = mix(h ^ mix(tag + GOLDEN))` per tag. A task's
//! seed depends only on its own tags, so adding trials or sizes never moves
//! the seeds of existing ones.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix(master), |h, &t| mix(h ^ mix(t.wrapping_add(GOLDEN))))
}
