//! Seeded random streams.
//!
//! All randomness derives from one root seed. Named sub-streams keep the
//! dataset, training, attack and evaluation draws independent of each other,
//! so changing one stage's budget never perturbs another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream `name` of the root seed.
pub fn stream(root_seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Stream `index` below a named stream, for per-item generators.
pub fn substream(root_seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name.as_bytes()).wrapping_add(index));
    rng
}

/// Fresh seed drawn from a parent stream.
pub fn child_seed(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
