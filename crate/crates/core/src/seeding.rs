//! Seed derivation for reproducible pipelines.
//!
//! Every random choice in the crate flows from a single user seed. Child
//! seeds for independent stages (per-row sampling, per-fold encoders, per
//! categorical column permutations) are derived with SplitMix64 so that
//! stages stay decorrelated without any hidden global state.

/// One step of the SplitMix64 output function.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a base seed and a stream index.
pub fn child_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(splitmix64(index)))
}

/// Derive a child seed from a base seed and a named stage.
///
/// The stage name is folded byte-wise so different stages never collide on
/// accidental index reuse.
pub fn stage_seed(base: u64, stage: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in stage.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    child_seed(base ^ h, index)
}
