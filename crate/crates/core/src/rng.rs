//! Seeded random streams.
//!
//! Every run derives all of its randomness from one master seed. Agent
//! streams are ChaCha8 streams selected by a counter (the stream id), so
//! adding an agent never perturbs the streams of the others. Environment
//! seeds are derived per episode with a SplitMix64 mix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved per agent: one for action selection, one for the
/// sharing protocol.
const STREAMS_PER_AGENT: u64 = 2;

/// Which of an agent's streams to open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStream {
    /// epsilon-greedy draws.
    Action,
    /// Ask/give Bernoulli draws, vote tie-breaks and targeted exploration.
    Protocol,
}

/// Open the ChaCha stream for `(master_seed, agent, kind)`.
pub fn agent_stream(master_seed: u64, agent: usize, kind: AgentStream) -> ChaCha8Rng {
    let offset = match kind {
        AgentStream::Action => 0,
        AgentStream::Protocol => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(1 + agent as u64 * STREAMS_PER_AGENT + offset);
    rng
}

/// Domains for [`derive_seed`].
pub mod domain {
    pub const TRAIN_ENV: u64 = 1;
    pub const EVAL_ENV: u64 = 2;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of `domain` under `master_seed`.
pub fn derive_seed(master_seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master_seed) ^ domain) ^ index)
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
