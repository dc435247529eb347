//! Seed derivation.
//!
//! Every stochastic routine takes an explicit stream. A single user seed fans
//! out into named sub-streams with [`derive_seed`], so one sub-experiment can be
//! re-run in isolation and still see exactly the same numbers:
//!
//! ```text
//! derive_seed(seed, label) = splitmix64(splitmix64(seed) ^ fnv1a64(label))
//! ```
//!
//! Streams are ChaCha8, whose output is specified independently of platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of the sub-stream named `label`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a64(label.as_bytes()))
}

/// A stream seeded directly from `seed`.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The sub-stream `(seed, label)`.
pub fn substream(seed: u64, label: &str) -> Stream {
    stream(derive_seed(seed, label))
}

/// Fisher-Yates shuffle, walking from the last position down: position `i`
/// swaps with `gen_range(0..=i)`.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// `0..n` in seeded random order.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    idx
}
