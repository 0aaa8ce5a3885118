//! Comparison methods: AdHocTD action advising and plain independent
//! Q-learning.

use rand::Rng;

use crate::agent::Agent;
use crate::envs::ObservationKey;
use crate::learner::{epsilon_greedy, greedy};
use crate::protocol::{ask_probability, compose_request, StudentRequest};

/// Probability that a teacher gives advice:
/// `1 - (1 + upsilon_g)^(-sqrt(n_visit) * q_range)`.
pub fn give_probability(n_visit: u64, q_range: f64, upsilon_g: f64) -> f64 {
    let g = (n_visit as f64).sqrt() * q_range;
    1.0 - (1.0 + upsilon_g).powf(-g)
}

/// Advised actions collected for one student.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdviceVote {
    pub actions: Vec<usize>,
}

impl AdviceVote {
    /// Actions that received the most votes, ascending.
    pub fn modal_set(&self) -> Vec<usize> {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &a in &self.actions {
            match counts.iter_mut().find(|(action, _)| *action == a) {
                Some((_, c)) => *c += 1,
                None => counts.push((a, 1)),
            }
        }
        let top = counts.iter().map(|&(_, c)| c).max().unwrap_or(0);
        let mut modal: Vec<usize> = counts
            .into_iter()
            .filter(|&(_, c)| c == top)
            .map(|(a, _)| a)
            .collect();
        modal.sort_unstable();
        modal
    }

    /// Majority vote; ties broken uniformly at random. A single modal action
    /// is returned without consuming randomness.
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let modal = self.modal_set();
        match modal.len() {
            0 => None,
            1 => Some(modal[0]),
            n => Some(modal[rng.gen_range(0..n)]),
        }
    }
}

/// One advice message: `teacher` told `student` to take `action`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Advice {
    pub student: usize,
    pub teacher: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdviceOutcome {
    pub actions: Vec<Option<usize>>,
    pub requests: Vec<StudentRequest>,
    pub advice: Vec<Advice>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdviceParams {
    pub sharing_start: u64,
    pub upsilon_ask: f64,
    pub upsilon_give: f64,
}

/// One synchronous AdHocTD round. Students ask with the same probability as
/// CONS students; each other agent with give budget advises its greedy
/// action with [`give_probability`]. One advice is followed exactly, several
/// are put to a majority vote.
pub fn adhoctd_round(
    agents: &mut [Agent],
    observations: &[ObservationKey],
    episode: u64,
    params: &AdviceParams,
) -> AdviceOutcome {
    let n = agents.len();
    let mut outcome = AdviceOutcome {
        actions: vec![None; n],
        ..Default::default()
    };
    if episode < params.sharing_start {
        return outcome;
    }
    for agent in agents.iter_mut() {
        if agent.budget.ask_remaining == 0 {
            continue;
        }
        let obs = &observations[agent.id];
        let p = ask_probability(agent.visits.get(obs), params.upsilon_ask);
        if agent.protocol_rng.gen::<f64>() < p {
            outcome.requests.push(compose_request(agent, obs));
        }
    }

    let mut votes: Vec<AdviceVote> = vec![AdviceVote::default(); n];
    for request in &outcome.requests {
        for teacher in agents.iter_mut() {
            if teacher.id == request.student || teacher.budget.give_remaining == 0 {
                continue;
            }
            let row = teacher.q.row(&request.obs);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let p = give_probability(
                teacher.visits.get(&request.obs),
                (hi - lo).abs(),
                params.upsilon_give,
            );
            if teacher.protocol_rng.gen::<f64>() < p {
                let action = greedy(&teacher.q, &request.obs);
                teacher.budget.spend_give();
                votes[request.student].actions.push(action);
                outcome.advice.push(Advice {
                    student: request.student,
                    teacher: teacher.id,
                    action,
                });
            }
        }
    }

    for request in &outcome.requests {
        let agent = &mut agents[request.student];
        let chosen = votes[agent.id].resolve(&mut agent.protocol_rng);
        if chosen.is_some() && agent.budget.spend_ask() {
            outcome.actions[agent.id] = chosen;
        }
    }
    outcome
}

/// Independent Q-learning action choice; never touches budgets.
pub fn iql_select(agent: &mut Agent, obs: &ObservationKey, epsilon: f64) -> usize {
    epsilon_greedy(&agent.q, obs, epsilon, &mut agent.action_rng)
}
