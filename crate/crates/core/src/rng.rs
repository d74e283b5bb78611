//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha stream derived from the
//! single run seed, so changing how many numbers one stage consumes never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Corruption,
    Dedupe,
    Sampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Corruption => 3,
            Stream::Dedupe => 4,
            Stream::Sampling => 5,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
