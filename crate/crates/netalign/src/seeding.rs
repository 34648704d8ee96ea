//! Deterministic seed derivation: one root seed fans out to per-stage
//! streams by stable hashing, so stages can rerun independently.

/// SplitMix64 finalizer; a good 64-bit mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Stage-specific sub-seed derived from the root seed and a tag.
pub fn sub_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a(tag.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        assert_eq!(sub_seed(42, "graph"), sub_seed(42, "graph"));
        assert_ne!(sub_seed(42, "graph"), sub_seed(42, "names"));
        assert_ne!(sub_seed(42, "graph"), sub_seed(43, "graph"));
    }
}
