//! Derivation of independent, reproducible RNG streams from one root seed.
//!
//! Sub-algorithms (per-type k-means, per-block PQ training, corpus
//! sampling, embedding tables) each get their own stream so adding or
//! reordering one consumer never perturbs another.

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(root seed, consumer tag, item)`.
pub(crate) fn stream_seed(seed: u64, tag: u64, item: u64) -> u64 {
    let mut state = seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
    let _ = splitmix64(&mut state);
    state ^= item.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    splitmix64(&mut state)
}

pub(crate) mod tags {
    pub const CORPUS: u64 = 1;
    pub const SOURCE_EMB: u64 = 2;
    pub const TARGET_EMB: u64 = 3;
    pub const KMEANS: u64 = 4;
    pub const TYPE_CLUSTERS: u64 = 5;
    pub const PQ_BLOCK: u64 = 6;
    pub const IVF: u64 = 7;
    pub const BENCH: u64 = 8;
}
