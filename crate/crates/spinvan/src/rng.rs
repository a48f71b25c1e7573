//! Seeding conventions.
//!
//! Every stochastic component draws from a `ChaCha8Rng`. Streams are derived
//! from one master seed as `splitmix64(master ^ fnv1a(namespace) ^ splitmix64(index))`,
//! with namespaces `"couplings"`, `"init"`, `"train"`, `"sample"`, `"estimate"`,
//! `"mc"` and `"bootstrap"`. Chunked work uses the chunk number as `index`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, namespace: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a(namespace) ^ splitmix64(index))
}

pub fn derived_rng(master: u64, namespace: &str, index: u64) -> SimRng {
    rng_from_seed(derive_seed(master, namespace, index))
}
