//! Per-agent persistent state.

use rand_chacha::ChaCha8Rng;

use crate::learner::QTable;
use crate::protocol::{BudgetState, VisitCounter};
use crate::rng::{agent_stream, AgentStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub q: QTable,
    pub visits: VisitCounter,
    pub budget: BudgetState,
    pub action_rng: ChaCha8Rng,
    pub protocol_rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(
        id: usize,
        n_actions: usize,
        q_init: f64,
        budget: BudgetState,
        master_seed: u64,
    ) -> Self {
        Self {
            id,
            q: QTable::new(n_actions, q_init),
            visits: VisitCounter::default(),
            budget,
            action_rng: agent_stream(master_seed, id, AgentStream::Action),
            protocol_rng: agent_stream(master_seed, id, AgentStream::Protocol),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.q.n_actions()
    }
}
