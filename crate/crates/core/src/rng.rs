//! Seeded random streams.
//!
//! A run has one master seed. Every consumer draws from its own named
//! substream so that, for example, enabling circuit noise never shifts the
//! scene sampling sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Env,
    Noise,
    Policy,
    Analysis,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Env => 2,
            Stream::Noise => 3,
            Stream::Policy => 4,
            Stream::Analysis => 5,
        }
    }
}

/// Open the named substream of `seed`.
pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
