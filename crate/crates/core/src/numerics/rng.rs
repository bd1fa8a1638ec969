//! Splittable deterministic random streams.
//!
//! Every stochastic choice in the simulator draws from a stream keyed by
//! `(seed, StreamId)`. Identical keys replay bit-identical sequences;
//! distinct purposes never share a stream, so skipping one consumer (e.g. an
//! ablated defense stage) cannot shift the draws seen by another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose label for one random stream.
///
/// The packed encoding reserves 8 bits for the purpose, 24 bits for a client
/// or minor index, and 32 bits for the round or major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    /// Global model initialization (independent of any client).
    ModelInit,
    /// Training-set chip generation.
    TrainData,
    /// Test-set chip generation.
    TestData,
    /// Server probe-set generation.
    Probe,
    /// Dirichlet partition draws.
    Partition,
    /// Per-round client sampling.
    ClientSelect { round: usize },
    /// Per-round, per-client poisoning choices.
    Poison { client: usize, round: usize },
    /// Per-epoch local batch shuffling.
    Shuffle { client: usize, round: usize, epoch: usize },
    /// Server-side adversarial sample generation for the next round.
    Adversarial { round: usize },
    /// Adaptive-attack trigger jitter.
    TriggerJitter { round: usize },
    /// Speckle perturbation for robustness-accuracy evaluation.
    RobustEval { index: usize },
    /// Free-form stream for tests and auxiliary tooling.
    Aux { tag: u8, index: usize },
}

impl StreamId {
    fn pack(self) -> u64 {
        let (purpose, a, b): (u64, u64, u64) = match self {
            StreamId::ModelInit => (1, 0, 0),
            StreamId::TrainData => (2, 0, 0),
            StreamId::TestData => (3, 0, 0),
            StreamId::Probe => (4, 0, 0),
            StreamId::Partition => (5, 0, 0),
            StreamId::ClientSelect { round } => (6, 0, round as u64),
            StreamId::Poison { client, round } => (7, client as u64, round as u64),
            StreamId::Shuffle {
                client,
                round,
                epoch,
            } => (8, client as u64, (round as u64) << 8 | epoch as u64),
            StreamId::Adversarial { round } => (9, 0, round as u64),
            StreamId::TriggerJitter { round } => (10, 0, round as u64),
            StreamId::RobustEval { index } => (11, 0, index as u64),
            StreamId::Aux { tag, index } => (12, tag as u64, index as u64),
        };
        debug_assert!(a < (1 << 24) && b < (1 << 32), "stream id field overflow");
        purpose << 56 | a << 32 | b
    }
}

/// A deterministic random stream: ChaCha8 keyed by the run seed with the
/// packed `StreamId` as the cipher stream number, so distinct ids index
/// disjoint keystreams of the same key.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.pack());
        Self { rng }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
