//! Counter-based random substreams.
//!
//! Every random draw in an experiment comes from a ChaCha stream whose key is
//! derived from `(master seed, substream kind, lane, replication, stage)`.
//! Results therefore do not depend on thread scheduling or on which stages a
//! buffer has already evicted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent purposes random numbers are used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    /// Observed data `ξ_t`. Shared by every lane so methods see the same stream.
    Data,
    /// Outer-layer θ-samples.
    Theta,
    /// Inner-layer simulation inputs.
    Simulation,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Data => 0x6461_7461,
            Substream::Theta => 0x7468_6574,
            Substream::Simulation => 0x7369_6d75,
        }
    }
}

/// Seed source for one experiment lane (typically one method).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    master: u64,
    lane: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams { master, lane: 0 }
    }

    /// Same master seed, separate θ and simulation streams.
    pub fn with_lane(self, lane: u64) -> Self {
        RngStreams { lane, ..self }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn lane(&self) -> u64 {
        self.lane
    }

    pub fn stream(&self, kind: Substream, replication: u64, stage: u64) -> ChaCha8Rng {
        let lane = if kind == Substream::Data { u64::MAX } else { self.lane };
        let mut state = self.master;
        let mut seed = [0u8; 32];
        for word in [kind.tag(), lane, replication, stage] {
            state ^= word;
            splitmix64(&mut state);
        }
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
