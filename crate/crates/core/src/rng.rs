//! Seeded random number substreams.
//!
//! Every stochastic component draws from a ChaCha8 generator keyed by the
//! user seed and a stream number, so each stage (simulation subject, chain,
//! test harness) is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SamplerRng = ChaCha8Rng;

const SIMULATE_BASE: u64 = 1 << 40;
const CHAIN_BASE: u64 = 0;
const OUTCOME_BASE: u64 = 1 << 20;

pub fn substream(seed: u64, stream: u64) -> SamplerRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for mediator chain `chain` (substream `seed.chain`).
pub fn chain_stream(seed: u64, chain: u64) -> SamplerRng {
    substream(seed, CHAIN_BASE + chain)
}

pub fn outcome_chain_stream(seed: u64, chain: u64) -> SamplerRng {
    substream(seed, OUTCOME_BASE + chain)
}

/// Stream for simulated subject `index`.
pub fn subject_stream(seed: u64, index: u64) -> SamplerRng {
    substream(seed, SIMULATE_BASE + index)
}
