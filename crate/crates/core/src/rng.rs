//! Deterministic random-number substreams.
//!
//! Every randomized routine in the crate draws from a [`ChaCha8Rng`] seeded
//! through [`substream`], which mixes a master seed, a domain tag, and an index
//! (day number, EM iteration, trip number, ...) into an independent stream.
//! Two properties follow:
//!
//! * bit-for-bit reproducibility: the same master seed always produces the same
//!   output, regardless of thread scheduling, because parallel units never share
//!   a stream;
//! * isolation: changing how many draws one unit consumes never shifts the
//!   stream of another unit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated consumers of the same master seed independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Synthetic trace generation (indexed by day).
    Generate = 1,
    /// Particle-filter E-step passes (indexed by iteration * n_days + day).
    Filter = 2,
    /// Parameter initialization.
    Init = 3,
    /// Forecast rollouts inside the predictor (indexed by query).
    Forecast = 4,
    /// Evaluation trip subsampling and per-trip forecasts.
    Evaluate = 5,
    /// Reference Monte-Carlo oracles.
    Oracle = 6,
}

/// SplitMix64 finalizer; a well-known 64-bit mixing function with full
/// avalanche, used here to fold (seed, domain, index) into one stream seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the independent RNG for (`master`, `domain`, `index`).
pub fn substream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(splitmix64(master) ^ (domain as u64)) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}
