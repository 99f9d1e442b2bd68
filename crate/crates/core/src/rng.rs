//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a 64-bit
//! seed. Child seeds are derived from a master seed and a path of tags, so a
//! trial's randomness depends only on `(master, trial index, purpose)` and
//! never on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used when deriving child seeds.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const JOINT_TRAIN: u64 = 1;
    pub const PRODUCT_TRAIN: u64 = 2;
    pub const JOINT_TEST: u64 = 3;
    pub const PRODUCT_TEST: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TERM_XYZ: u64 = 7;
    pub const TERM_XZ: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of tags.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Generator for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Chooses `m` distinct indices from `0..n` by a partial Fisher-Yates shuffle.
///
/// The first `m` entries of the shuffled prefix are returned in draw order.
pub fn sample_without_replacement<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
) -> Vec<usize> {
    assert!(m <= n, "cannot draw {m} of {n} without replacement");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}
