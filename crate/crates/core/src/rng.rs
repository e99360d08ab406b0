//! Seeded randomness. Every stochastic step draws from a ChaCha8 stream
//! keyed by the run seed plus a purpose tag, so streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Recorded in split files and manifests.
pub const PRNG_NAME: &str = "chacha8/rand_chacha-0.9";

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed for `(purpose, index)` under `seed`.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let tag = purpose
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    splitmix64(splitmix64(seed ^ tag).wrapping_add(index))
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

/// Stable 64-bit hash of a string (first eight bytes of SHA-256).
pub fn hash64(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_purpose_and_index() {
        assert_ne!(derive_seed(1, "split", 0), derive_seed(1, "negatives", 0));
        assert_ne!(derive_seed(1, "split", 0), derive_seed(1, "split", 1));
        assert_eq!(derive_seed(7, "epoch", 3), derive_seed(7, "epoch", 3));
    }

    #[test]
    fn hash64_is_stable() {
        assert_eq!(hash64("design"), hash64("design"));
        assert_ne!(hash64("design"), hash64("modern"));
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
