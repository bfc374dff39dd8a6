//! Small helpers for bitmask-encoded binary state vectors.
//!
//! Joint congestion states over up to 64 links, and per-link auxiliary cause
//! vectors, are stored as `u64` masks throughout the crate. Bit `k` of a joint
//! state is the state of the link with dense index `k`; bit layouts for
//! auxiliary vectors are documented where they are used.

/// Maximum number of links representable in one joint-state mask.
pub const MAX_MASK_BITS: usize = 64;

/// Read bit `k` of `mask` as a boolean.
#[inline]
pub fn bit(mask: u64, k: usize) -> bool {
    (mask >> k) & 1 == 1
}

/// Set bit `k` of `mask` to `value`.
#[inline]
pub fn with_bit(mask: u64, k: usize, value: bool) -> u64 {
    if value {
        mask | (1u64 << k)
    } else {
        mask & !(1u64 << k)
    }
}

/// Pack a slice of booleans into a mask, index 0 at bit 0.
pub fn mask_from_bools(bits: &[bool]) -> u64 {
    assert!(bits.len() <= MAX_MASK_BITS, "too many bits for one mask");
    bits.iter()
        .enumerate()
        .fold(0u64, |m, (k, &b)| if b { m | (1u64 << k) } else { m })
}

/// Unpack the low `n` bits of a mask into booleans.
pub fn bools_from_mask(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| bit(mask, k)).collect()
}

/// Gather the bits of `state` at the given positions into a compact mask:
/// output bit `k` is `state`'s bit `positions[k]`.
#[inline]
pub fn gather_bits(state: u64, positions: &[usize]) -> u64 {
    let mut out = 0u64;
    for (k, &p) in positions.iter().enumerate() {
        out |= ((state >> p) & 1) << k;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_roundtrip() {
        let bs = [true, false, false, true, true];
        let m = mask_from_bools(&bs);
        assert_eq!(m, 0b11001);
        assert_eq!(bools_from_mask(m, 5), bs);
    }

    #[test]
    fn gather_picks_positions_in_order() {
        // state bits: 0 -> 1, 1 -> 0, 2 -> 1, 3 -> 1
        let state = 0b1101u64;
        assert_eq!(gather_bits(state, &[2, 0, 1]), 0b011);
        assert_eq!(gather_bits(state, &[3, 3, 3]), 0b111);
        assert_eq!(gather_bits(state, &[]), 0);
    }

    #[test]
    fn with_bit_sets_and_clears() {
        assert_eq!(with_bit(0, 3, true), 0b1000);
        assert_eq!(with_bit(0b1010, 1, false), 0b1000);
    }
}
