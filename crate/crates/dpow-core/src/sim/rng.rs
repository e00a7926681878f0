//! Derived random streams.
//!
//! Every random decision in the harness draws from a stream keyed by the
//! run seed plus a path of integers (purpose tag, trial, actor, ...). The
//! key is hashed into a ChaCha seed, so streams are mutually independent
//! and each one is reproducible in isolation: consumers can be added,
//! removed, or reordered without shifting anyone else's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hash::keccak256;

/// Purpose tags namespacing the derived streams. Values are arbitrary but
/// must never be reused across purposes.
pub mod purpose {
    pub const DIFFICULTY: u64 = 1;
    pub const ASSIGN_LATENCY: u64 = 2;
    pub const HASH_COUNT: u64 = 3;
    pub const SUBMIT_LATENCY: u64 = 4;
    pub const FABRIC: u64 = 5;
    pub const BYZ_COIN: u64 = 6;
    pub const CANDIDATE: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const EXP2: u64 = 9;
    pub const CAMPAIGN: u64 = 10;
}

/// Independent generator for `(seed, parts...)`.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut key = Vec::with_capacity(8 * (1 + parts.len()));
    key.extend_from_slice(&seed.to_be_bytes());
    for p in parts {
        key.extend_from_slice(&p.to_be_bytes());
    }
    ChaCha8Rng::from_seed(keccak256(&key).0)
}

/// Uniform draw from `[min, max]`.
pub fn uniform(rng: &mut ChaCha8Rng, min: f64, max: f64) -> f64 {
    min + rng.random::<f64>() * (max - min)
}

/// Log-uniform integer from `[min, max]`, both at least 1.
pub fn log_uniform_u64(rng: &mut ChaCha8Rng, min: u64, max: u64) -> u64 {
    if min == max {
        return min;
    }
    let (lo, hi) = ((min as f64).ln(), (max as f64).ln());
    let x = uniform(rng, lo, hi).exp().round() as u64;
    x.clamp(min, max)
}

/// Number of hash attempts until a solution at difficulty `d`, i.e. a
/// geometric draw with success probability `1/d`, at least 1.
pub fn geometric_hashes(rng: &mut ChaCha8Rng, difficulty: u64) -> u64 {
    if difficulty <= 1 {
        return 1;
    }
    let p = 1.0 / difficulty as f64;
    let u: f64 = rng.random();
    // Inverse CDF; u == 0 would give ln(0), nudge it inside the open set.
    let u = u.max(f64::MIN_POSITIVE);
    let h = (u.ln() / (1.0 - p).ln()).ceil();
    (h as u64).max(1)
}
