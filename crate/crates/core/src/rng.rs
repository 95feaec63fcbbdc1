//! Deterministic stream derivation for Monte Carlo replicas.
//!
//! Every replica draws from its own counter-based ChaCha stream derived from
//! `(seed, purpose tag, replica index)`. Streams are independent of execution
//! order, so parallel runs reduce to byte-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep estimator sides on disjoint streams even under a shared
/// seed; two-sided comparisons must not share random numbers.
pub mod tag {
    pub const ORIGINAL: u64 = 0x6f72_6967_696e_616c;
    pub const SPINE: u64 = 0x7370_696e_655f_5f5f;
    pub const MASS: u64 = 0x6d61_7373_5f5f_5f5f;
    pub const SAMPLER: u64 = 0x7361_6d70_6c65_725f;
    pub const PHASE: u64 = 0x7068_6173_655f_5f5f;
    pub const REDUCED: u64 = 0x7265_6475_6365_645f;
    pub const LIMIT: u64 = 0x6c69_6d69_745f_5f5f;
    pub const GENERIC: u64 = 0x6765_6e65_7269_635f;
}

/// RNG for one replica of one purpose. The tag is folded into the seed and the
/// replica index selects the ChaCha stream, so (seed, tag, replica) triples
/// never collide for distinct inputs.
pub fn replica_rng(seed: u64, purpose: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(replica);
    rng
}
