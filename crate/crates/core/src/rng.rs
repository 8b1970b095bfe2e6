//! Named random substreams derived from a single run seed.
//!
//! Every stochastic component draws from its own ChaCha stream so that,
//! for example, changing the replay sampling does not perturb the channel
//! traces a run sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Mobility = 1,
    Fading = 2,
    SegmentSizes = 3,
    Init = 4,
    Exploration = 5,
    ReplaySampling = 6,
    TraceSampling = 7,
    Evaluation = 8,
}

impl Stream {
    pub const ALL: [Stream; 8] = [
        Stream::Mobility,
        Stream::Fading,
        Stream::SegmentSizes,
        Stream::Init,
        Stream::Exploration,
        Stream::ReplaySampling,
        Stream::TraceSampling,
        Stream::Evaluation,
    ];
}

pub fn substream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
