//! Deterministic RNG derivation.
//!
//! Every stochastic consumer in the lab (traffic inflow, exploration,
//! weight initialization, replay sampling, ...) gets its own named stream
//! derived from a single root seed. Streams are independent of each other
//! and stable across runs, so a given root seed reproduces a run exactly
//! regardless of which consumers happen to draw and in what order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash of a label.
fn fnv1a(label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Derive the seed for a named stream from the root seed.
pub fn stream_seed(root: u64, label: &str) -> u64 {
    root ^ fnv1a(label)
}

/// Build a deterministic RNG for a named stream.
pub fn stream_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, label))
}

/// Stream labels used across the crate, collected here so no two
/// consumers accidentally share a stream.
pub mod labels {
    /// Vehicle inflow arrivals and lane assignment.
    pub const INFLOW: &str = "env.inflow";
    /// Driver imperfection noise in the car-following update.
    pub const DRIVER_NOISE: &str = "env.driver-noise";
    /// Epsilon-greedy exploration draws.
    pub const EXPLORE: &str = "agent.explore";
    /// Network weight initialization.
    pub const WEIGHT_INIT: &str = "agent.weight-init";
    /// Replay memory minibatch sampling.
    pub const REPLAY: &str = "agent.replay";
    /// Planning-step (state, action) resampling.
    pub const PLANNING: &str = "agent.planning";
}
