//! Deterministic randomness plumbing.
//!
//! Every stochastic step in the pipeline draws from a named sub-stream of a
//! single root seed, so one `--seed` flag reproduces an entire run and
//! unrelated stages never perturb each other's draws. Sub-stream seeds are
//! derived by hashing the stream name into the root with FNV-1a and then
//! whitening through a splitmix64 round.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alloc::vec::Vec;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive the seed for a named sub-stream of `root`.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    splitmix64(root ^ fnv1a(stream.as_bytes()))
}

/// A ChaCha8 generator positioned at the start of a named sub-stream.
pub fn rng_for(root: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Sample `k` distinct indices from `0..n` without replacement, returned in
/// ascending order. If `k >= n` every index is returned.
pub fn sample_indices(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if k >= n {
        return all;
    }
    // Partial Fisher-Yates: after k swaps the prefix is a uniform k-subset.
    for i in 0..k {
        let j = rng.gen_range(i..n);
        all.swap(i, j);
    }
    let mut picked: Vec<usize> = all[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Uniformly shuffle a slice in place.
pub fn shuffle<T>(rng: &mut impl Rng, xs: &mut [T]) {
    xs.shuffle(rng);
}
