pub const ID_BITS: u32 = 21;
pub const MAX_VOCAB: usize = 1 << ID_BITS;
pub const MAX_ORDER: usize = 6;
const MASK: u128 = (1 << ID_BITS) - 1;

/// Packs up to [`MAX_ORDER`] ids, first id in the most significant position.
#[inline]
pub fn pack(ids: &[u32]) -> u128 {
    debug_assert!(ids.len() <= MAX_ORDER);
    ids.iter()
        .fold(0u128, |k, &id| (k << ID_BITS) | u128::from(id))
}

pub fn unpack(mut key: u128, order: usize) -> Vec<u32> {
    let mut out = vec![0u32; order];
    for slot in out.iter_mut().rev() {
        *slot = (key & MASK) as u32;
        key >>= ID_BITS;
    }
    out
}

/// Key of the (n-1)-word context of an n-gram key.
#[inline]
pub fn context_of(key: u128) -> u128 {
    key >> ID_BITS
}

/// Last word of an n-gram key.
#[inline]
pub fn last_word(key: u128) -> u32 {
    (key & MASK) as u32
}

/// Key of the n-gram with its first word removed.
#[inline]
pub fn drop_first(key: u128, order: usize) -> u128 {
    key & ((1u128 << (ID_BITS * (order as u32 - 1))) - 1)
}

/// First word of an n-gram key of the given order.
#[inline]
pub fn first_word(key: u128, order: usize) -> u32 {
    ((key >> (ID_BITS * (order as u32 - 1))) & MASK) as u32
}

/// Half-open key range holding every extension `context + w`.
#[inline]
pub fn extension_range(context: u128) -> (u128, u128) {
    (context << ID_BITS, (context + 1) << ID_BITS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pack_helpers(ids in proptest::collection::vec(0u32..(MAX_VOCAB as u32), 1..=MAX_ORDER)) {
            let n = ids.len();
            let k = pack(&ids);
            prop_assert_eq!(unpack(k, n), ids.clone());
            prop_assert_eq!(last_word(k), ids[n - 1]);
            prop_assert_eq!(first_word(k, n), ids[0]);
            prop_assert_eq!(context_of(k), pack(&ids[..n - 1]));
            prop_assert_eq!(drop_first(k, n), pack(&ids[1..]));
            let (lo, hi) = extension_range(pack(&ids[..n - 1]));
            prop_assert!(lo <= k && k < hi);
        }
    }
}
