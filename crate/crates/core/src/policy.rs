//! Action-probability machinery shared by students and teachers.
//!
//! Everything here is a pure function of its inputs plus, for sampling, an
//! explicitly passed random stream. The student pipeline is:
//!
//! ```text
//! Q-row --boltzmann--> policy --soft_update(knowledge)--> softmax --> targeted_explore
//! ```

use rand::Rng;
use thiserror::Error;

/// Tolerance used when checking that a probability vector sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("action space must contain at least 2 actions, got {0}")]
    TooFewActions(usize),
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("probability {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("episode {episode} precedes sharing start {start}")]
    BeforeSharingStart { episode: u64, start: u64 },
    #[error("invalid weight schedule: {0}")]
    BadSchedule(String),
    #[error("prestige list is empty")]
    NoTeachers,
    #[error("tau must be in (0,1), got {0}")]
    BadTau(f64),
    #[error("positive and negative weights must sum to 1, got {0}")]
    BadKnowledgeWeights(f64),
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("teacher {teacher} appears twice in the {kind} knowledge of action {action}")]
    DuplicateTeacher {
        teacher: usize,
        action: usize,
        kind: &'static str,
    },
    #[error("teacher weights for action {action} sum to {sum}, expected 1")]
    TeacherWeightsNotNormalized { action: usize, sum: f64 },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// A probability vector over a discrete action space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
}

impl PolicyDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(PolicyError::TooFewActions(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(PolicyError::NonFinite { index, value });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(PolicyError::OutOfRange { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(PolicyError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_actions: usize) -> Result<Self> {
        if n_actions < 2 {
            return Err(PolicyError::TooFewActions(n_actions));
        }
        Ok(Self {
            probs: vec![1.0 / n_actions as f64; n_actions],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_actions(&self) -> usize {
        self.probs.len()
    }

    /// Most probable action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Least probable action; ties go to the lowest index.
    pub fn argmin(&self) -> usize {
        argmin(&self.probs)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut worst = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[worst] {
            worst = i;
        }
    }
    worst
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Boltzmann policy over a Q-row: `softmax(q / temperature)`.
pub fn boltzmann_policy(q_values: &[f64], temperature: f64) -> Result<PolicyDistribution> {
    if q_values.len() < 2 {
        return Err(PolicyError::TooFewActions(q_values.len()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(PolicyError::BadTemperature(temperature));
    }
    if let Some((index, &value)) = q_values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PolicyError::NonFinite { index, value });
    }
    let logits: Vec<f64> = q_values.iter().map(|q| q / temperature).collect();
    Ok(PolicyDistribution {
        probs: softmax(&logits),
    })
}

/// Normalized population standard deviation of the action probabilities.
///
/// Uniform policies score 0 and one-hot policies score 1.
pub fn policy_confidence(policy: &PolicyDistribution) -> f64 {
    // one-hot is exactly 1; the general formula can land an ulp short
    if policy.probs.iter().any(|&p| p == 1.0) {
        return 1.0;
    }
    let n = policy.n_actions() as f64;
    let mean = 1.0 / n;
    let variance = policy
        .probs
        .iter()
        .map(|p| (p - mean) * (p - mean))
        .sum::<f64>()
        / n;
    let confidence = n * variance.sqrt() / (n - 1.0).sqrt();
    confidence.clamp(0.0, 1.0)
}

/// Decay schedule for the weight of negative knowledge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSchedule {
    /// Episode at which knowledge sharing starts.
    pub sharing_start: u64,
    /// Descent-rate hyperparameter; must stay below 1.
    pub descent_rate: f64,
}

impl WeightSchedule {
    pub fn new(sharing_start: u64, descent_rate: f64) -> Result<Self> {
        if sharing_start < 1 {
            return Err(PolicyError::BadSchedule(
                "sharing start episode must be >= 1".into(),
            ));
        }
        if !(descent_rate < 1.0 && descent_rate.is_finite()) {
            return Err(PolicyError::BadSchedule(format!(
                "descent rate must be finite and < 1, got {descent_rate}"
            )));
        }
        Ok(Self {
            sharing_start,
            descent_rate,
        })
    }
}

/// Weight of negative knowledge at `episode`: `1 / ((1 - rate) / start * episode + rate)`.
///
/// The positive weight is its complement.
pub fn negative_weight(episode: u64, schedule: &WeightSchedule) -> Result<f64> {
    if episode < schedule.sharing_start {
        return Err(PolicyError::BeforeSharingStart {
            episode,
            start: schedule.sharing_start,
        });
    }
    let a = schedule.descent_rate;
    let denom = (1.0 - a) / schedule.sharing_start as f64 * episode as f64 + a;
    Ok((1.0 / denom).clamp(0.0, 1.0))
}

/// Softmax over teacher prestiges.
pub fn teacher_weights(prestiges: &[f64]) -> Result<Vec<f64>> {
    if prestiges.is_empty() {
        return Err(PolicyError::NoTeachers);
    }
    if let Some((index, &value)) = prestiges.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PolicyError::NonFinite { index, value });
    }
    Ok(softmax(prestiges))
}

/// One teacher's statement about an action: its own probability for it and
/// the weight the student assigns to that teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnowledgeItem {
    pub teacher: usize,
    pub prob: f64,
    pub weight: f64,
}

/// Everything the student learned about one action this step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionKnowledge {
    pub action: usize,
    /// Teachers that rated this action their best.
    pub positive: Vec<KnowledgeItem>,
    /// Teachers that rated this action their worst.
    pub negative: Vec<KnowledgeItem>,
}

impl ActionKnowledge {
    pub fn new(action: usize) -> Self {
        Self {
            action,
            ..Default::default()
        }
    }

    fn validate(&self, n_actions: usize) -> Result<()> {
        if self.action >= n_actions {
            return Err(PolicyError::ActionOutOfRange {
                action: self.action,
                n_actions,
            });
        }
        for (items, kind) in [(&self.positive, "positive"), (&self.negative, "negative")] {
            for (i, item) in items.iter().enumerate() {
                if items[..i].iter().any(|o| o.teacher == item.teacher) {
                    return Err(PolicyError::DuplicateTeacher {
                        teacher: item.teacher,
                        action: self.action,
                        kind,
                    });
                }
            }
            if !items.is_empty() {
                let sum: f64 = items.iter().map(|k| k.weight).sum();
                if (sum - 1.0).abs() > SUM_TOLERANCE {
                    return Err(PolicyError::TeacherWeightsNotNormalized {
                        action: self.action,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a soft update.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftUpdate {
    /// Modified probabilities before normalization.
    pub intermediate: Vec<f64>,
    /// Softmax of `intermediate`.
    pub policy: PolicyDistribution,
    /// True iff at least one intermediate value differs from the input.
    pub changed: bool,
    /// Number of positive terms that passed their mask.
    pub positive_terms: usize,
    /// Number of negative terms that passed their mask.
    pub negative_terms: usize,
}

/// Move each action probability toward the teachers' reported probabilities.
///
/// Positive targets only pull a probability up and negative targets only
/// push it down; the result is renormalized with a unit-temperature softmax.
pub fn soft_update(
    policy: &PolicyDistribution,
    knowledge: &[ActionKnowledge],
    positive_share: f64,
    negative_share: f64,
    tau: f64,
) -> Result<SoftUpdate> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(PolicyError::BadTau(tau));
    }
    if !(0.0..=1.0).contains(&positive_share)
        || !(0.0..=1.0).contains(&negative_share)
        || (positive_share + negative_share - 1.0).abs() > SUM_TOLERANCE
    {
        return Err(PolicyError::BadKnowledgeWeights(
            positive_share + negative_share,
        ));
    }
    let n = policy.n_actions();
    for k in knowledge {
        k.validate(n)?;
    }

    let mut intermediate = policy.probs.clone();
    let mut positive_terms = 0;
    let mut negative_terms = 0;
    for k in knowledge {
        let p = policy.probs[k.action];
        let mut delta = 0.0;
        for item in k.positive.iter().filter(|item| item.prob > p) {
            delta += positive_share * item.weight * tau * (item.prob - p);
            positive_terms += 1;
        }
        for item in k.negative.iter().filter(|item| item.prob < p) {
            delta += negative_share * item.weight * tau * (item.prob - p);
            negative_terms += 1;
        }
        // Several entries may name the same action; they all start from p.
        intermediate[k.action] += delta;
    }
    let changed = intermediate
        .iter()
        .zip(&policy.probs)
        .any(|(new, old)| new != old);
    let policy = PolicyDistribution {
        probs: softmax(&intermediate),
    };
    Ok(SoftUpdate {
        intermediate,
        policy,
        changed,
        positive_terms,
        negative_terms,
    })
}

/// Which of the `|A|-1` equal confidence intervals `confidence` falls into,
/// counted from 1. Intervals are half-open; 0 maps to 1 and 1 maps to `|A|-1`.
pub fn exploration_interval(confidence: f64, n_actions: usize) -> usize {
    let slots = n_actions.saturating_sub(1).max(1);
    let q = (confidence.clamp(0.0, 1.0) * slots as f64).floor() as usize + 1;
    q.clamp(1, slots)
}

/// Actions that survive removing the `remove` least probable ones.
///
/// Ties among the least probable go against the higher index.
pub fn surviving_actions(policy: &PolicyDistribution, remove: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..policy.n_actions()).collect();
    order.sort_by(|&a, &b| {
        policy.probs[a]
            .total_cmp(&policy.probs[b])
            .then_with(|| b.cmp(&a))
    });
    let mut kept: Vec<usize> = order.into_iter().skip(remove).collect();
    kept.sort_unstable();
    kept
}

/// The distribution sampled in the exploration branch: survivors
/// renormalized linearly, removed actions at exactly zero.
pub fn pruned_distribution(policy: &PolicyDistribution, confidence: f64) -> Vec<f64> {
    let n = policy.n_actions();
    let remove = exploration_interval(confidence, n);
    let kept = surviving_actions(policy, remove);
    let mass: f64 = kept.iter().map(|&a| policy.probs[a]).sum();
    let mut out = vec![0.0; n];
    for &a in &kept {
        out[a] = if mass > 0.0 {
            policy.probs[a] / mass
        } else {
            1.0 / kept.len() as f64
        };
    }
    out
}

/// Exact selection probabilities of [`targeted_explore`].
pub fn targeted_distribution(policy: &PolicyDistribution, confidence: f64) -> Vec<f64> {
    let confidence = confidence.clamp(0.0, 1.0);
    let mut out: Vec<f64> = pruned_distribution(policy, confidence)
        .into_iter()
        .map(|p| (1.0 - confidence) * p)
        .collect();
    out[policy.argmax()] += confidence;
    out
}

/// Confidence-gated action choice: exploit the argmax with probability
/// `confidence`, otherwise sample among the actions left after pruning the
/// worst `q`.
pub fn targeted_explore<R: Rng + ?Sized>(
    policy: &PolicyDistribution,
    confidence: f64,
    rng: &mut R,
) -> usize {
    let confidence = confidence.clamp(0.0, 1.0);
    if rng.gen::<f64>() < confidence {
        return policy.argmax();
    }
    sample_index(&pruned_distribution(policy, confidence), rng)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
