//! Seeded random streams.
//!
//! Every run is driven by a single 64-bit seed. Each consumer draws from its
//! own ChaCha8 stream (same key, different stream id), so for example turning
//! the Fisher regularizer on or off never shifts the gradient draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Fixed stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gradient = 0,
    FisherScore = 1,
    Regularizer = 2,
    Data = 3,
    Evaluation = 4,
    Diagnostic = 5,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
