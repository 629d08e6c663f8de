//! Deterministic sub-seeds so every stage draws from its own stream.

/// Mixes a run seed with a stage label (FNV-1a, then a SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_differ() {
        assert_ne!(derive_seed(1, "init"), derive_seed(1, "shuffle"));
        assert_ne!(derive_seed(1, "init"), derive_seed(2, "init"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
