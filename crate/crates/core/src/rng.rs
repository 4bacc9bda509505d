//! Keyed random streams.
//!
//! Every random draw in the crate comes from an [`RngStream`] whose seed is a
//! hash of a structured key, so results do not depend on the order in which
//! parallel work items run. A stream is consumed when it is turned into a
//! generator; sub-streams are derived with [`RngStream::child`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the key, so two purposes never share
/// samples even when every index matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Perturbation = 1,
    Rollout = 2,
    InnerEstimate = 3,
    AdaptedRollout = 4,
    TaskBatch = 5,
    BatchSlot = 6,
    Iteration = 7,
    TaskGeneration = 8,
    Verification = 9,
    Custom = 10,
}

/// Top-level stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub experiment_seed: u64,
    pub task_index: u64,
    pub iteration: u64,
    pub perturbation_index: u64,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn absorb(state: u64, word: u64) -> u64 {
    splitmix64(state ^ splitmix64(word))
}

impl RngStream {
    pub fn new(key: StreamKey) -> Self {
        let seed = [
            key.task_index,
            key.iteration,
            key.perturbation_index,
            key.purpose as u64,
        ]
        .into_iter()
        .fold(splitmix64(key.experiment_seed), absorb);
        Self { seed }
    }

    /// Stream keyed by the experiment seed alone.
    pub fn from_seed(experiment_seed: u64) -> Self {
        Self {
            seed: splitmix64(experiment_seed),
        }
    }

    pub fn child(&self, purpose: Purpose, index: u64) -> Self {
        Self {
            seed: absorb(absorb(self.seed, purpose as u64), index),
        }
    }

    /// The derived 64-bit seed; exposed for manifests and debugging.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn into_rng(self) -> StreamRng {
        StreamRng::seed_from_u64(self.seed)
    }
}
