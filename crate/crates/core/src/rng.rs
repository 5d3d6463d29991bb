//! Seeded random substreams.
//!
//! Every `(replication, source, purpose)` triple maps to its own ChaCha8
//! stream under the master seed, so replications can run in any order or in
//! parallel and still reproduce bit-identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is consumed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Arrivals = 0,
    Service = 1,
    Preemption = 2,
}

pub type Stream = ChaCha8Rng;

pub fn substream(master_seed: u64, replication: u64, source: usize, kind: StreamKind) -> Stream {
    assert!(source < (1 << 20), "too many sources for the stream layout");
    assert!(replication < (1 << 36), "too many replications for the stream layout");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((replication << 28) | ((source as u64) << 8) | kind as u64);
    rng
}
