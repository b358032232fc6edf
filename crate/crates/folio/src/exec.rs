//! Deterministic execution helpers: seed derivation and order-preserving
//! parallel maps.
//!
//! Every randomized work item (a frontier draw, a subset evaluation, an
//! episode rollout) gets its own seed derived from a base seed, a textual
//! label, and the item index. Because each item is independent and results
//! are collected in index order, the parallel path is bit-identical to the
//! sequential one; the `parallel` feature only changes wall time.

/// Derives a stream seed from `(base, label, index)`.
///
/// FNV-1a folds the label into the state, then two splitmix64 rounds mix in
/// the index. Fixed constants, no platform- or version-dependent hashing.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ base;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(h).wrapping_add(index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `f` over `0..n`, returning results in index order.
///
/// Runs on the rayon pool when the `parallel` feature is enabled, otherwise
/// as a plain loop. `f` must depend only on its index.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference implementation of [`map_indexed`], always a plain
/// loop. Benchmarks compare the two; callers wanting the fallback without
/// recompiling can use this directly.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable() {
        // Frozen values: determinism across runs is the contract.
        let a = derive_seed(42, "frontier", 0);
        let b = derive_seed(42, "frontier", 0);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(42, "frontier", 1), "index must matter");
        assert_ne!(a, derive_seed(42, "rollout", 0), "label must matter");
        assert_ne!(a, derive_seed(43, "frontier", 0), "base must matter");
    }

    #[test]
    fn parallel_map_matches_sequential() {
        let par: Vec<u64> = map_indexed(257, |i| derive_seed(7, "x", i as u64));
        let seq: Vec<u64> = map_indexed_seq(257, |i| derive_seed(7, "x", i as u64));
        assert_eq!(par, seq);
    }
}
