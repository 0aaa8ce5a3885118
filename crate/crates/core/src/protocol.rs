//! The three-stage knowledge-sharing protocol.
//!
//! 1. A student whose ask budget is not exhausted broadcasts a
//!    [`StudentRequest`] with probability [`ask_probability`].
//! 2. Every other agent with give budget left answers with a
//!    [`TeacherReply`] if it has seen the observation more often or values
//!    it more highly than the student ([`should_share`]).
//! 3. The student folds the replies into its Boltzmann policy with
//!    [`soft_update`] and picks an action by targeted exploration.
//!
//! A round is synchronous: requests go out in ascending student id, every
//! teacher answers from its Q-table as of the start of the step, and
//! students then assimilate. Nothing here touches Q-values.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::envs::ObservationKey;
use crate::learner::QTable;
use crate::policy::{
    boltzmann_policy, negative_weight, policy_confidence, sample_index, soft_update,
    targeted_explore, teacher_weights, ActionKnowledge, KnowledgeItem, PolicyDistribution,
    PolicyError, SoftUpdate, WeightSchedule,
};

/// What a student broadcasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRequest {
    pub student: usize,
    pub obs: ObservationKey,
    /// Student's visit count for `obs`, including the current visit.
    pub visits: u64,
    pub max_q: f64,
}

/// A teacher's best and worst action with their probabilities, plus
/// its prestige for the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherReply {
    pub teacher: usize,
    pub best_action: usize,
    pub best_prob: f64,
    pub worst_action: usize,
    pub worst_prob: f64,
    pub prestige: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    pub ask_initial: u64,
    pub ask_remaining: u64,
    pub give_initial: u64,
    pub give_remaining: u64,
}

impl BudgetState {
    pub fn new(ask: u64, give: u64) -> Self {
        Self {
            ask_initial: ask,
            ask_remaining: ask,
            give_initial: give,
            give_remaining: give,
        }
    }

    pub fn ask_used(&self) -> u64 {
        self.ask_initial - self.ask_remaining
    }

    pub fn give_used(&self) -> u64 {
        self.give_initial - self.give_remaining
    }

    /// Returns false, leaving the budget untouched, when exhausted.
    pub fn spend_ask(&mut self) -> bool {
        if self.ask_remaining == 0 {
            return false;
        }
        self.ask_remaining -= 1;
        true
    }

    pub fn spend_give(&mut self) -> bool {
        if self.give_remaining == 0 {
            return false;
        }
        self.give_remaining -= 1;
        true
    }
}

/// Per-observation visit counts; absent keys read as 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VisitCounter {
    counts: HashMap<ObservationKey, u64>,
}

impl VisitCounter {
    pub fn get(&self, obs: &ObservationKey) -> u64 {
        self.counts.get(obs).copied().unwrap_or(0)
    }

    /// Count one more visit and return the new total.
    pub fn increment(&mut self, obs: &ObservationKey) -> u64 {
        if let Some(c) = self.counts.get_mut(obs) {
            *c += 1;
            return *c;
        }
        self.counts.insert(obs.clone(), 1);
        1
    }

    pub fn set(&mut self, obs: ObservationKey, count: u64) {
        self.counts.insert(obs, count);
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn sorted(&self) -> Vec<(&ObservationKey, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, &c)| (k, c)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Protocol hyperparameters shared by every agent in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingParams {
    pub schedule: WeightSchedule,
    pub tau: f64,
    pub upsilon_ask: f64,
    pub temperature: f64,
}

/// Components switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub without_negative: bool,
    pub without_positive: bool,
    pub without_targeted_exploration: bool,
}

/// Probability of asking for help: `(1 + upsilon_a)^(-sqrt(n_visit))`.
pub fn ask_probability(n_visit: u64, upsilon_a: f64) -> f64 {
    (1.0 + upsilon_a).powf(-(n_visit as f64).sqrt())
}

/// Teacher activation: more visits or a higher max Q-value than the student.
pub fn should_share(request: &StudentRequest, teacher_visits: u64, teacher_max_q: f64) -> bool {
    teacher_visits > request.visits || teacher_max_q > request.max_q
}

/// Build the request for `obs`. The visit counter must already include the
/// current visit.
pub fn compose_request(agent: &Agent, obs: &ObservationKey) -> StudentRequest {
    StudentRequest {
        student: agent.id,
        obs: obs.clone(),
        visits: agent.visits.get(obs),
        max_q: agent.q.max_q(obs),
    }
}

/// Least probable action other than `best`; lowest index on ties.
fn worst_action(policy: &PolicyDistribution, best: usize) -> usize {
    let p = policy.probs();
    let mut worst = if best == 0 { 1 } else { 0 };
    for i in 0..p.len() {
        if i != best && p[i] < p[worst] {
            worst = i;
        }
    }
    worst
}

/// Knowledge a teacher holds about `obs`, regardless of budget or gating.
pub fn extract_knowledge(
    teacher: usize,
    q: &QTable,
    visits: u64,
    obs: &ObservationKey,
    temperature: f64,
) -> Result<TeacherReply, PolicyError> {
    let policy = boltzmann_policy(q.row(obs), temperature)?;
    let best_action = policy.argmax();
    let worst_action = worst_action(&policy, best_action);
    Ok(TeacherReply {
        teacher,
        best_action,
        best_prob: policy.probs()[best_action],
        worst_action,
        worst_prob: policy.probs()[worst_action],
        prestige: (visits as f64).sqrt() * policy_confidence(&policy),
    })
}

/// Teacher side: stay silent when the give budget is exhausted or the
/// activation condition fails; otherwise reply and spend one give unit.
pub fn compose_reply(
    teacher: &mut Agent,
    request: &StudentRequest,
    temperature: f64,
) -> Result<Option<TeacherReply>, PolicyError> {
    if teacher.budget.give_remaining == 0 {
        return Ok(None);
    }
    let visits = teacher.visits.get(&request.obs);
    if !should_share(request, visits, teacher.q.max_q(&request.obs)) {
        return Ok(None);
    }
    let reply = extract_knowledge(teacher.id, &teacher.q, visits, &request.obs, temperature)?;
    teacher.budget.spend_give();
    Ok(Some(reply))
}

/// Group replies by action. Each reply contributes positive knowledge about
/// its best action and negative knowledge about its worst; teacher weights
/// are a softmax of prestige within each group.
pub fn build_knowledge(
    replies: &[TeacherReply],
    n_actions: usize,
    ablation: Ablation,
) -> Result<Vec<ActionKnowledge>, PolicyError> {
    let mut out = Vec::new();
    for action in 0..n_actions {
        let mut k = ActionKnowledge::new(action);
        if !ablation.without_positive {
            let from: Vec<&TeacherReply> =
                replies.iter().filter(|r| r.best_action == action).collect();
            if !from.is_empty() {
                let w = teacher_weights(&from.iter().map(|r| r.prestige).collect::<Vec<_>>())?;
                k.positive = from
                    .iter()
                    .zip(w)
                    .map(|(r, weight)| KnowledgeItem {
                        teacher: r.teacher,
                        prob: r.best_prob,
                        weight,
                    })
                    .collect();
            }
        }
        if !ablation.without_negative {
            let from: Vec<&TeacherReply> = replies
                .iter()
                .filter(|r| r.worst_action == action)
                .collect();
            if !from.is_empty() {
                let w = teacher_weights(&from.iter().map(|r| r.prestige).collect::<Vec<_>>())?;
                k.negative = from
                    .iter()
                    .zip(w)
                    .map(|(r, weight)| KnowledgeItem {
                        teacher: r.teacher,
                        prob: r.worst_prob,
                        weight,
                    })
                    .collect();
            }
        }
        if !k.positive.is_empty() || !k.negative.is_empty() {
            out.push(k);
        }
    }
    Ok(out)
}

/// Fold replies into the student's policy. `None` when there are no replies
/// or no probability moved.
pub fn assimilate(
    policy: &PolicyDistribution,
    replies: &[TeacherReply],
    episode: u64,
    params: &SharingParams,
    ablation: Ablation,
) -> Result<Option<SoftUpdate>, PolicyError> {
    if replies.is_empty() {
        return Ok(None);
    }
    let knowledge = build_knowledge(replies, policy.n_actions(), ablation)?;
    let negative_share = negative_weight(episode, &params.schedule)?;
    let update = soft_update(
        policy,
        &knowledge,
        1.0 - negative_share,
        negative_share,
        params.tau,
    )?;
    Ok(update.changed.then_some(update))
}

/// Student side: assimilate the replies and choose an action, or `None`
/// when no knowledge was gained. The caller spends the ask budget.
#[allow(clippy::too_many_arguments)]
pub fn student_select_action<R: Rng + ?Sized>(
    q: &QTable,
    obs: &ObservationKey,
    replies: &[TeacherReply],
    episode: u64,
    params: &SharingParams,
    ablation: Ablation,
    rng: &mut R,
) -> Result<Option<usize>, PolicyError> {
    let policy = boltzmann_policy(q.row(obs), params.temperature)?;
    let Some(update) = assimilate(&policy, replies, episode, params, ablation)? else {
        return Ok(None);
    };
    let action = if ablation.without_targeted_exploration {
        sample_index(update.policy.probs(), rng)
    } else {
        let confidence = policy_confidence(&update.policy);
        targeted_explore(&update.policy, confidence, rng)
    };
    Ok(Some(action))
}

/// What happened in one sharing round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundOutcome {
    /// Shared action per agent; `None` falls back to the agent's own
    /// exploration.
    pub actions: Vec<Option<usize>>,
    pub requests: Vec<StudentRequest>,
    /// `(student, reply)` in emission order.
    pub replies: Vec<(usize, TeacherReply)>,
}

impl RoundOutcome {
    pub fn silent(n_agents: usize) -> Self {
        Self {
            actions: vec![None; n_agents],
            ..Default::default()
        }
    }
}

/// One synchronous CONS round over all agents.
///
/// Visit counters must already include the current observations. Before the
/// sharing start episode nothing happens and no randomness is consumed.
pub fn sharing_round(
    agents: &mut [Agent],
    observations: &[ObservationKey],
    episode: u64,
    params: &SharingParams,
    ablation: Ablation,
) -> Result<RoundOutcome, PolicyError> {
    let n = agents.len();
    let mut outcome = RoundOutcome::silent(n);
    if episode < params.schedule.sharing_start {
        return Ok(outcome);
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

    let mut inbox: Vec<Vec<TeacherReply>> = vec![Vec::new(); n];
    for request in &outcome.requests {
        for j in 0..n {
            if j == request.student {
                continue;
            }
            if let Some(reply) = compose_reply(&mut agents[j], request, params.temperature)? {
                inbox[request.student].push(reply.clone());
                outcome.replies.push((request.student, reply));
            }
        }
    }

    for request in &outcome.requests {
        let i = request.student;
        let agent = &mut agents[i];
        let action = student_select_action(
            &agent.q,
            &request.obs,
            &inbox[i],
            episode,
            params,
            ablation,
            &mut agent.protocol_rng,
        )?;
        if action.is_some() && agent.budget.spend_ask() {
            outcome.actions[i] = action;
        }
    }
    Ok(outcome)
}
