//! Seeded random streams.
//!
//! Every source of randomness in a run derives from one 64-bit seed plus a
//! fixed stream id, so runs are reproducible and streams never overlap.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Explore = 3,
    Replay = 4,
    EvalEnv = 5,
    Test = 6,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
