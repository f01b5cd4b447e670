//! Deterministic derivation of per-task RNG seeds from one master seed.
//!
//! Every randomized routine in the crate takes an explicit seed. Workflows
//! that need several independent streams (restarts, replicates, phases)
//! derive child seeds from the master seed with [`child_seed`] instead of
//! sharing a single RNG, so concurrency and call order cannot change results.
//!
//! The scheme is: hash the label with FNV-1a, mix it into the master seed,
//! then finalize with the splitmix64 permutation. Both primitives are pure
//! integer arithmetic, so derived seeds are identical on every platform.

/// splitmix64 finalizer; bijective on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives the seed for the stream named `label` from `master`.
///
/// Distinct labels give (with overwhelming probability) distinct streams;
/// the same `(master, label)` pair always gives the same seed.
pub fn child_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label.as_bytes()))
}

/// Derives the seed for the `index`-th member of a family of streams
/// (replicates, restarts) rooted at `label`.
pub fn indexed_seed(master: u64, label: &str, index: usize) -> u64 {
    splitmix64(child_seed(master, label) ^ splitmix64(index as u64))
}
