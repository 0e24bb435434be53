//! Portable seeded randomness.
//!
//! All sampling uses ChaCha8 seeded with `seed_from_u64(seed)` and a
//! separate stream per independent draw sequence (`set_stream`). Bounded
//! integers come from [`uniform_below`], whose rejection rule is spelled out
//! so other implementations can reproduce the same draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `0..n`: draw `u64`s, reject values at or above the
/// largest multiple of `n`, and reduce the first accepted one modulo `n`.
pub fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}

/// Moves a uniform `k`-subset of `items` to the front, in draw order
/// (partial Fisher-Yates: position `i` swaps with `i + uniform_below(len - i)`).
pub fn partial_shuffle<T>(rng: &mut impl RngCore, items: &mut [T], k: usize) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        items.swap(i, j);
    }
}
