//! Deterministic seed derivation.
//!
//! Every stochastic component in the suite owns a [`ChaCha8Rng`] seeded
//! through this module, so a run is a pure function of its base seed.
//! Sub-seeds are derived with SplitMix64 over a (seed, stream, index)
//! triple, which keeps independent components decorrelated without any
//! shared-state RNG.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named RNG streams, so different consumers of the same base seed never
/// draw from the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TraceGen,
    FrameGen,
    NetInit,
    Action,
    Env,
    Shuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::TraceGen => 0x7452_4143,
            Stream::FrameGen => 0x4652_414d,
            Stream::NetInit => 0x4e45_5449,
            Stream::Action => 0x4143_5449,
            Stream::Env => 0x454e_5649,
            Stream::Shuffle => 0x5348_5546,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed, a stream tag, and an index.
pub fn derive(seed: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(seed ^ stream.tag());
    splitmix64(a ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// A ChaCha RNG for the derived sub-seed. ChaCha gives identical output on
/// every platform, which the determinism contracts rely on.
pub fn rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}
