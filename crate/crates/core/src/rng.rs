//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a xoshiro256** generator
//! (Blackman & Vigna). Its state `s[0..4]` advances as
//!
//! ```text
//! result = rotl(s1 * 5, 7) * 9
//! t  = s1 << 17
//! s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//! s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Streams are keyed by the user seed plus a list of integer tags (stream
//! name, subdomain id, iteration, ...). The key is folded with the SplitMix64
//! finalizer
//!
//! ```text
//! z = (x + 0x9E3779B97F4A7C15)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z ^ (z >> 31)
//! ```
//!
//! and the folded value seeds the generator through `seed_from_u64`, which
//! also expands with SplitMix64. All arithmetic is wrapping 64-bit, so
//! streams are identical on every platform.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type StreamRng = Xoshiro256StarStar;

/// Stream tags. Distinct streams never share a generator.
pub mod tag {
    pub const GEOMETRY: u64 = 1;
    pub const RECEPTORS: u64 = 2;
    pub const TRAFFIC: u64 = 3;
    pub const WEATHER: u64 = 4;
    pub const SPLIT: u64 = 10;
    pub const INIT: u64 = 11;
    pub const SHUFFLE: u64 = 12;
    pub const EVAL_TIMES: u64 = 13;
    pub const BENCH: u64 = 20;
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a seed and a tag path into a single 64-bit stream key.
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_key(seed, tags))
}
