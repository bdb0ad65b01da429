//! Named random streams derived from one root seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! place never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Augment,
    Split,
    Probe,
    KMeans,
    Synth,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Augment => 3,
            Stream::Split => 4,
            Stream::Probe => 5,
            Stream::KMeans => 6,
            Stream::Synth => 7,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
