//! Canonical keys for discrete tuples.
//!
//! Every table in the crate is keyed by a [`Key`] built from the canonical byte
//! encoding of a tuple (positions, health values, actions). Encodings of at most
//! 16 bytes are packed losslessly, so the original bytes can be recovered with
//! [`Key::bytes`]. Longer encodings are reduced with a 128-bit XXH3 digest.
//! All keys stored in one table share a single layout, so packed and hashed
//! keys never meet in the same map.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key(pub u128);

impl Key {
    /// Raw bytes of a packed key. Only meaningful when the encoding that
    /// produced this key was at most 16 bytes long.
    pub fn bytes(self, len: usize) -> Option<Vec<u8>> {
        if len > KeyBuilder::PACKED_LEN {
            return None;
        }
        Some((0..len).map(|k| (self.0 >> (8 * k)) as u8).collect())
    }
}

#[derive(Clone, Debug, Default)]
pub struct KeyBuilder {
    buf: smallvec::SmallVec<[u8; 32]>,
}

impl KeyBuilder {
    pub const PACKED_LEN: usize = 16;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, byte: u8) -> &mut Self {
        self.buf.push(byte);
        self
    }

    pub fn extend(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn truncate(&mut self, len: usize) {
        self.buf.truncate(len);
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn key(&self) -> Key {
        key_of(&self.buf)
    }
}

pub fn key_of(bytes: &[u8]) -> Key {
    if bytes.len() <= KeyBuilder::PACKED_LEN {
        let mut v = 0u128;
        for (k, b) in bytes.iter().enumerate() {
            v |= (*b as u128) << (8 * k);
        }
        Key(v)
    } else {
        Key(xxhash_rust::xxh3::xxh3_128(bytes))
    }
}

/// Hasher for [`Key`]: a splitmix64 finalizer over the folded 128-bit value.
/// Keys are either packed bytes or already digests, so one mixing round is
/// enough to spread them over buckets.
#[derive(Default, Clone, Copy)]
pub struct KeyHasher {
    state: u64,
}

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        let mut z = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.state = self.state.rotate_left(8) ^ (*b as u64);
        }
    }

    fn write_u128(&mut self, v: u128) {
        let lo = v as u64;
        let hi = (v >> 64) as u64;
        self.state ^= lo ^ hi.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    }
}

pub type KeyMap<V> = HashMap<Key, V, BuildHasherDefault<KeyHasher>>;

pub fn key_map<V>() -> KeyMap<V> {
    KeyMap::default()
}

/// Entries of a map in key order. Used wherever floating-point accumulation
/// or serialization must not depend on bucket layout.
pub fn sorted_entries<V>(map: &KeyMap<V>) -> Vec<(Key, &V)> {
    let mut v: Vec<(Key, &V)> = map.iter().map(|(k, v)| (*k, v)).collect();
    v.sort_unstable_by_key(|(k, _)| *k);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_keys_round_trip_their_bytes() {
        let mut b = KeyBuilder::new();
        b.extend(&[3, 0, 11, 7, 255]);
        let k = b.key();
        assert_eq!(k.bytes(5).unwrap(), vec![3, 0, 11, 7, 255]);
    }

    #[test]
    fn long_encodings_are_hashed() {
        let a: Vec<u8> = (0..20).collect();
        let mut c = a.clone();
        c[19] = 0;
        assert_ne!(key_of(&a), key_of(&c));
        assert!(key_of(&a).bytes(20).is_none());
    }

    #[test]
    fn packed_keys_ignore_trailing_zero_bytes() {
        // Tables must never mix layouts.
        assert_eq!(key_of(&[1, 2]), key_of(&[1, 2, 0]));
        assert_ne!(key_of(&[1, 2, 0]), key_of(&[1, 2, 1]));
    }
}
