//! Toy primitives standing in for block ciphers, hashes and key agreement.

/// Generator of the multiplicative group used by [`toydh`].
pub const DH_G: u64 = 17;
pub const DH_P: u64 = 65521;

const GOLDEN: u32 = 2654435761;

fn round_key(key: u16, i: u32) -> u32 {
    (key.rotate_left(4 * i) as u32) ^ (i.wrapping_mul(0x9e37))
}

fn round(r: u8, k: u32) -> u8 {
    ((r as u32).wrapping_mul(GOLDEN).wrapping_add(k) >> 24) as u8
}

/// 16-bit keyed permutation: four Feistel rounds over 8-bit halves.
pub fn toyblock(key: u16, x: u16) -> u16 {
    let (mut l, mut r) = ((x >> 8) as u8, x as u8);
    for i in 0..4 {
        let f = round(r, round_key(key, i));
        (l, r) = (r, l ^ f);
    }
    ((l as u16) << 8) | r as u16
}

pub fn toyblock_inverse(key: u16, y: u16) -> u16 {
    let (mut l, mut r) = ((y >> 8) as u8, y as u8);
    for i in (0..4).rev() {
        let f = round(l, round_key(key, i));
        (l, r) = (r ^ f, l);
    }
    ((l as u16) << 8) | r as u16
}

/// 32-bit iterated multiply-xor hash.
pub fn toyhash(data: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in data {
        h = (h ^ *b as u32).wrapping_mul(16_777_619);
    }
    h ^= h >> 15;
    h = h.wrapping_mul(0x2c1b_3c6d);
    h ^= h >> 12;
    h
}

/// g^a mod p.
pub fn toydh(a: u16) -> u16 {
    let (mut result, mut base, mut e) = (1u64, DH_G % DH_P, a as u64);
    while e > 0 {
        if e & 1 == 1 {
            result = result * base % DH_P;
        }
        base = base * base % DH_P;
        e >>= 1;
    }
    result as u16
}

pub fn toymac(key: u16, data: &[u8]) -> u32 {
    let mut buf = alloc::vec::Vec::with_capacity(data.len() + 2);
    buf.extend_from_slice(&key.to_be_bytes());
    buf.extend_from_slice(data);
    toyhash(&buf)
}

/// Fixture cipher reproducing the worked example: maps 0x1234 to 0x2343.
pub fn papercipher(x: u16) -> u16 {
    x ^ 0x3177
}

/// Session-key derivation from a client seed.
pub fn master(seed: u16) -> u16 {
    toyhash(&seed.to_be_bytes()) as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn toyblock_round_trips() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (k, x): (u16, u16) = (rng.gen(), rng.gen());
            assert_eq!(toyblock_inverse(k, toyblock(k, x)), x);
        }
    }

    #[test]
    fn toyblock_is_a_permutation() {
        let mut seen = alloc::vec![false; 1 << 16];
        for x in 0..=u16::MAX {
            let y = toyblock(0x5a5a, x) as usize;
            assert!(!seen[y]);
            seen[y] = true;
        }
    }

    #[test]
    fn dh_identity_and_reference() {
        assert_eq!(toydh(0), 1);
        assert_eq!(toydh(1), 17);
        let mut acc = 1u64;
        for _ in 0..1234 {
            acc = acc * 17 % 65521;
        }
        assert_eq!(toydh(1234) as u64, acc);
    }

    #[test]
    fn papercipher_fixture() {
        assert_eq!(papercipher(0x1234), 0x2343);
    }
}
