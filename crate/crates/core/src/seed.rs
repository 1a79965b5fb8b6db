//! Named sub-seeds derived from one master seed.
//!
//! Each consumer of randomness (data generation, initialization, shuffling,
//! mask sampling) draws from its own stream, so changing how much one stream
//! consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(name.as_bytes())))
}

pub fn derive_indexed(master: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive(master, name) ^ splitmix64(index))
}

pub fn rng(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive(master, name))
}

pub fn rng_indexed(master: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(master, name, index))
}
