//! Per-process random streams.
//!
//! Each process gets its own generator keyed on the root seed, the owner's
//! name and the process index, so adding a process or a user never shifts the
//! draws of anybody else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};

use crate::domain::Distribution;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn process_stream(seed: u64, user: &str, index: u32) -> ChaCha8Rng {
    let key = splitmix64(fnv1a(user.as_bytes()) ^ splitmix64(u64::from(index)));
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ key))
}

/// One draw in milliseconds with the given mean.
pub fn sample(rng: &mut ChaCha8Rng, dist: Distribution, mean_ms: f64) -> f64 {
    match dist {
        Distribution::Fixed => mean_ms,
        Distribution::Exponential if mean_ms > 0.0 => {
            Exp::new(1.0 / mean_ms).map_or(mean_ms, |e| e.sample(rng))
        }
        Distribution::Exponential => 0.0,
    }
}
