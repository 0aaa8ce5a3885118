//! Checks behind the acceptance criteria, sized by their arguments so the
//! integration tests can run them small and the acceptance suite full-size.
//! Each returns a short detail string on success and a reason on failure.

use std::path::Path;

use cons_marl::agent::Agent;
use cons_marl::checkpoint::Checkpoint;
use cons_marl::config::{Algorithm, ExperimentConfig};
use cons_marl::envs::cleanup::CleanupConfig;
use cons_marl::envs::ft::FtConfig;
use cons_marl::envs::pgm::PgmConfig;
use cons_marl::envs::{EnvConfig, ObservationKey};
use cons_marl::harness::{checkpoint_path, train_seed};
use cons_marl::policy::{
    boltzmann_policy, negative_weight, policy_confidence, soft_update, targeted_distribution,
    targeted_explore, teacher_weights, ActionKnowledge, KnowledgeItem, PolicyDistribution,
    WeightSchedule,
};
use cons_marl::protocol::{
    assimilate, sharing_round, Ablation, BudgetState, SharingParams, TeacherReply,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Outcome = Result<String, String>;

fn err<T: std::fmt::Debug>(what: &str, e: proptest::test_runner::TestError<T>) -> String {
    format!("{what}: {e}")
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn dist(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
        .prop_filter("non-zero mass", |v| v.iter().sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
}

/// Teacher messages for a policy over `n` actions:
/// `(best, p_best, worst, p_worst, prestige)` with best != worst.
fn messages(n: usize) -> impl Strategy<Value = Vec<Msg>> {
    prop::collection::vec(
        (0..n, 0..n - 1, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0).prop_map(move |(b, w, x, y, l)| {
            let w = if w >= b { w + 1 } else { w };
            (b, x.max(y), w, x.min(y), l)
        }),
        0..5,
    )
}

fn knowledge(msgs: &[Msg], n: usize, pos: bool, neg: bool) -> Vec<ActionKnowledge> {
    let mut out = Vec::new();
    for a in 0..n {
        let mut k = ActionKnowledge::new(a);
        let p: Vec<(usize, &Msg)> = msgs.iter().enumerate().filter(|(_, m)| m.0 == a).collect();
        let q: Vec<(usize, &Msg)> = msgs.iter().enumerate().filter(|(_, m)| m.2 == a).collect();
        if pos && !p.is_empty() {
            let w = teacher_weights(&p.iter().map(|(_, m)| m.4).collect::<Vec<_>>()).unwrap();
            k.positive = p
                .iter()
                .zip(w)
                .map(|((t, m), weight)| KnowledgeItem {
                    teacher: *t,
                    prob: m.1,
                    weight,
                })
                .collect();
        }
        if neg && !q.is_empty() {
            let w = teacher_weights(&q.iter().map(|(_, m)| m.4).collect::<Vec<_>>()).unwrap();
            k.negative = q
                .iter()
                .zip(w)
                .map(|((t, m), weight)| KnowledgeItem {
                    teacher: *t,
                    prob: m.3,
                    weight,
                })
                .collect();
        }
        out.push(k);
    }
    out
}

/// Invariants of the policy arithmetic over `cases` random inputs each.
pub fn policy_invariants(cases: u32) -> Outcome {
    runner(cases)
        .run(&prop::collection::vec(-700.0f64..700.0, 2..12), |q| {
            let p = boltzmann_policy(&q, 1.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(p.probs().iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let shifted: Vec<f64> = q.iter().map(|x| x + 3.25).collect();
            let s = boltzmann_policy(&shifted, 1.0).unwrap();
            for (a, b) in p.probs().iter().zip(s.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            Ok(())
        })
        .map_err(|e| err("boltzmann", e))?;

    runner(cases)
        .run(&(dist(2..10), 2usize..12, 0usize..12), |(p, n, hot)| {
            let g = policy_confidence(&PolicyDistribution::new(p.clone()).unwrap());
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!((g - confidence(&p)).abs() <= 1e-9);
            let uniform = PolicyDistribution::uniform(n).unwrap();
            prop_assert_eq!(policy_confidence(&uniform), 0.0);
            let mut one_hot = vec![0.0; n];
            one_hot[hot % n] = 1.0;
            prop_assert_eq!(
                policy_confidence(&PolicyDistribution::new(one_hot).unwrap()),
                1.0
            );
            Ok(())
        })
        .map_err(|e| err("confidence", e))?;

    for (e_i, a) in [(5000u64, 0.0), (5000, 0.3), (5000, -0.5)] {
        let s = WeightSchedule::new(e_i, a).unwrap();
        if negative_weight(e_i, &s).unwrap() != 1.0 {
            return Err(format!("h(e_i) != 1 for a={a}"));
        }
        runner(cases)
            .run(&(e_i..10_000_000u64, 0u64..100_000), |(x, d)| {
                let h0 = negative_weight(x, &s).unwrap();
                let h1 = negative_weight(x + d, &s).unwrap();
                prop_assert!((0.0..=1.0).contains(&h0));
                prop_assert!(h1 <= h0);
                prop_assert!((h0 - neg_weight(x, e_i, a).clamp(0.0, 1.0)).abs() <= 1e-12);
                Ok(())
            })
            .map_err(|e| err("negative weight", e))?;
    }

    runner(cases)
        .run(
            &(prop::collection::vec(-50.0f64..50.0, 1..8), -20.0f64..20.0),
            |(l, c)| {
                let w = teacher_weights(&l).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
                let ws = teacher_weights(&shifted).unwrap();
                for (a, b) in w.iter().zip(&ws) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
                for i in 0..l.len() {
                    for j in 0..l.len() {
                        if l[i] > l[j] {
                            prop_assert!(w[i] >= w[j]);
                        }
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| err("teacher weights", e))?;

    let bundle =
        (2usize..6).prop_flat_map(|n| (dist(n..n + 1), messages(n), 0.0f64..=1.0, 0.01f64..0.99));
    runner(cases)
        .run(&bundle, |(p, msgs, w_n, tau)| {
            let n = p.len();
            let policy = PolicyDistribution::new(p.clone()).unwrap();
            let both = soft_update(
                &policy,
                &knowledge(&msgs, n, true, true),
                1.0 - w_n,
                w_n,
                tau,
            )
            .unwrap();
            for a in 0..n {
                let hi = msgs
                    .iter()
                    .filter(|m| m.0 == a && m.1 > p[a])
                    .map(|m| m.1)
                    .fold(p[a], f64::max);
                let lo = msgs
                    .iter()
                    .filter(|m| m.2 == a && m.3 < p[a])
                    .map(|m| m.3)
                    .fold(p[a], f64::min);
                let x = both.intermediate[a];
                prop_assert!(
                    x >= lo - 1e-12 && x <= hi + 1e-12,
                    "{x} outside [{lo}, {hi}]"
                );
                prop_assert!((0.0..=1.0).contains(&x));
            }
            let pos = soft_update(
                &policy,
                &knowledge(&msgs, n, true, false),
                1.0 - w_n,
                w_n,
                tau,
            )
            .unwrap();
            let neg = soft_update(
                &policy,
                &knowledge(&msgs, n, false, true),
                1.0 - w_n,
                w_n,
                tau,
            )
            .unwrap();
            for a in 0..n {
                prop_assert!(pos.intermediate[a] >= p[a]);
                prop_assert!(neg.intermediate[a] <= p[a]);
            }
            let fired_pos = msgs.iter().filter(|m| m.1 > p[m.0]).count();
            let fired_neg = msgs.iter().filter(|m| m.3 < p[m.2]).count();
            prop_assert_eq!(both.positive_terms, fired_pos);
            prop_assert_eq!(both.negative_terms, fired_neg);
            let silent =
                soft_update(&policy, &knowledge(&msgs, n, false, true), 1.0, 0.0, tau).unwrap();
            let expect = softmax(&p);
            prop_assert!(!silent.changed);
            for (a, b) in silent.policy.probs().iter().zip(&expect) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            Ok(())
        })
        .map_err(|e| err("soft update", e))?;

    Ok(format!("{cases} cases per property"))
}

fn grid_policies(n: usize) -> Vec<Vec<f64>> {
    // probabilities in tenths, every entry positive
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            if left >= 1 {
                let mut v: Vec<f64> = cur.iter().map(|&k| k as f64 / 10.0).collect();
                v.push(left as f64 / 10.0);
                out.push(v);
            }
            return;
        }
        for k in 1..left {
            cur.push(k);
            rec(n, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 10, &mut Vec::new(), &mut out);
    out
}

fn grid_messages(n: usize) -> Vec<Msg> {
    let prestiges = [0.0, 1.5];
    let mut out = Vec::new();
    for b in 0..n {
        for w in 0..n {
            if w == b {
                continue;
            }
            for pb in 1..=10 {
                for pw in 0..=pb.min(5) {
                    if (pb + pw) % 2 == 1 && pb != 10 {
                        continue;
                    }
                    for &l in &prestiges {
                        out.push((b, pb as f64 / 10.0, w, pw as f64 / 10.0, l));
                    }
                }
            }
        }
    }
    out
}

fn replies(msgs: &[Msg]) -> Vec<TeacherReply> {
    msgs.iter()
        .enumerate()
        .map(|(t, m)| TeacherReply {
            teacher: t + 1,
            best_action: m.0,
            best_prob: m.1,
            worst_action: m.2,
            worst_prob: m.3,
            prestige: m.4,
        })
        .collect()
}

/// Post-assimilation policy and selection probabilities versus the
/// reference implementation on an enumerated grid. `stride` thins the
/// two- and three-teacher combinations.
pub fn oracle_equivalence(stride: usize) -> Outcome {
    let settings = [
        (5000u64, 0.0, 5000u64),
        (5000, 0.0, 12_000),
        (5000, 0.3, 10_000),
        (5000, -0.5, 7000),
    ];
    let ablations = [
        Ablation::default(),
        Ablation {
            without_negative: true,
            ..Ablation::default()
        },
        Ablation {
            without_positive: true,
            ..Ablation::default()
        },
    ];
    let mut compared = 0u64;
    let mut worst = 0.0f64;
    let mut counter = 0usize;
    for n in 2..=4 {
        let policies = grid_policies(n);
        let msgs = grid_messages(n);
        let mut bundles: Vec<Vec<Msg>> = msgs.iter().map(|m| vec![*m]).collect();
        for (i, a) in msgs.iter().enumerate() {
            for b in msgs.iter().skip(i % 7).step_by(7 * stride) {
                bundles.push(vec![*a, *b]);
                counter += 1;
                if counter % (3 * stride) == 0 {
                    let c = msgs[(i * 31 + counter) % msgs.len()];
                    bundles.push(vec![*a, *b, c]);
                }
            }
        }
        for (pi, p) in policies.iter().enumerate() {
            let policy = PolicyDistribution::new(p.clone()).unwrap();
            for (bi, bundle) in bundles.iter().enumerate() {
                if (pi + bi) % stride != 0 {
                    continue;
                }
                let (e_i, a, x) = settings[(pi + bi) % settings.len()];
                let ablation = ablations[bi % ablations.len()];
                let tau = [0.5, 0.2, 0.9][(pi * 7 + bi) % 3];
                let params = SharingParams {
                    schedule: WeightSchedule::new(e_i, a).unwrap(),
                    tau,
                    upsilon_ask: 0.5,
                    temperature: 1.0,
                };
                let w_n = neg_weight(x, e_i, a).clamp(0.0, 1.0);
                let expected = oracle_assimilate(
                    p,
                    bundle,
                    1.0 - w_n,
                    w_n,
                    tau,
                    !ablation.without_positive,
                    !ablation.without_negative,
                );
                let got = assimilate(&policy, &replies(bundle), x, &params, ablation)
                    .map_err(|e| e.to_string())?;
                match (expected, got) {
                    (None, None) => {}
                    (Some(want), Some(update)) => {
                        for (u, v) in update.policy.probs().iter().zip(&want) {
                            worst = worst.max((u - v).abs());
                        }
                        let c = confidence(&want);
                        let sel = targeted_distribution(&update.policy, policy_confidence(&update.policy));
                        for (u, v) in sel.iter().zip(oracle_targeted(&want, c)) {
                            worst = worst.max((u - v).abs());
                        }
                    }
                    (want, got) => {
                        return Err(format!(
                            "policy {p:?}, messages {bundle:?}: oracle changed={} implementation changed={}",
                            want.is_some(),
                            got.is_some()
                        ))
                    }
                }
                compared += 1;
                if worst > 1e-9 {
                    return Err(format!(
                        "deviation {worst:e} at policy {p:?}, messages {bundle:?}"
                    ));
                }
            }
        }
    }
    Ok(format!("{compared} cases, max deviation {worst:.1e}"))
}

/// Sampling statistics of confidence-gated exploration.
pub fn exploration_statistics(samples: usize) -> Outcome {
    let fixtures: Vec<(Vec<f64>, Option<f64>)> = vec![
        (vec![0.4, 0.25, 0.15, 0.12, 0.08], Some(0.3)),
        (vec![0.4, 0.25, 0.15, 0.12, 0.08], None),
        (vec![0.1, 0.2, 0.3, 0.4], Some(0.5)),
        (vec![0.1, 0.2, 0.3, 0.4], Some(0.7)),
        (vec![0.2, 0.5, 0.3], Some(0.1)),
        (vec![0.2, 0.5, 0.3], None),
        (vec![0.25, 0.25, 0.25, 0.25], Some(0.0)),
        (vec![0.3, 0.3, 0.2, 0.2], Some(0.4)),
        (vec![0.05, 0.05, 0.6, 0.1, 0.1, 0.1], Some(0.55)),
        (vec![0.7, 0.3], Some(0.1)),
        (vec![0.3, 0.7], Some(0.5)),
        (vec![0.45, 0.55], None),
        (vec![0.1, 0.9], Some(0.99)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (i, (p, c)) in fixtures.iter().enumerate() {
        let policy = PolicyDistribution::new(p.clone()).unwrap();
        let c = c.unwrap_or_else(|| policy_confidence(&policy));
        let expect = oracle_targeted(p, c);
        let best = policy.argmax();
        let mut counts = vec![0usize; p.len()];
        for _ in 0..samples {
            counts[targeted_explore(&policy, c, &mut rng)] += 1;
        }
        let n = samples as f64;
        for (a, &k) in counts.iter().enumerate() {
            if expect[a] == 0.0 && k != 0 {
                return Err(format!("fixture {i}: removed action {a} sampled {k} times"));
            }
            let sd = (expect[a] * (1.0 - expect[a]) / n).sqrt();
            if (k as f64 / n - expect[a]).abs() > 5.0 * sd + 1e-12 {
                return Err(format!(
                    "fixture {i}: action {a} frequency {} vs exact {}",
                    k as f64 / n,
                    expect[a]
                ));
            }
        }
        let sigma = (c * (1.0 - c) / n).sqrt();
        if (counts[best] as f64 / n) < c - 3.0 * sigma {
            return Err(format!("fixture {i}: argmax frequency below confidence"));
        }
        if p.len() == 2 && counts[best] != samples {
            return Err(format!("fixture {i}: two actions but non-argmax sampled"));
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(i as u64);
        let mut r2 = ChaCha8Rng::seed_from_u64(i as u64);
        for _ in 0..1000 {
            if targeted_explore(&policy, c, &mut r1) != targeted_explore(&policy, c, &mut r2) {
                return Err(format!("fixture {i}: not deterministic under a fixed seed"));
            }
        }
    }
    Ok(format!("{} fixtures x {samples} samples", fixtures.len()))
}

/// Three agents, two actions, all at observation `o`, episode 2 with
/// sharing from episode 1 and descent rate 0 (so w_n = w_p = 1/2), tau 1/2.
/// The ask rate is pushed to 1 so every agent with budget asks.
///
/// Before the round:
///   agent 0: Q=[0,0], 1 visit, budgets ask 10 / give 10
///   agent 1: Q=[2,0], 4 visits, ask 10 / give 10
///   agent 2: Q=[0,1], 9 visits, ask 10 / give 1
///
/// Hand trace:
///   request 0 (n=1, maxQ 0): agent 1 replies (4 > 1), agent 2 replies
///     (9 > 1) and exhausts its give budget.
///   request 1 (n=4, maxQ 2): agent 0 fails both tests, agent 2 is out
///     of budget.
///   request 2 (n=9, maxQ 1): agent 0 fails both tests, agent 1 replies
///     on max-Q (2 > 1).
///   agent 0 starts from [1/2, 1/2]; action 0 gains 1/4 (p1b - 1/2) from
///     agent 1 and loses 1/4 (1/2 - p2w) from agent 2, with
///     p1b = e^2/(e^2+1) and p2w = 1/(1+e); action 1 moves by the mirror
///     amounts, so action 0 ends ahead and, with two actions, is taken.
///   agent 1 received nothing and keeps its budget.
///   agent 2 starts from [1/(1+e), e/(1+e)]; agent 1's best (action 0)
///     pulls action 0 up by 1/4 (p1b - 1/(1+e)) and its worst pushes
///     action 1 down by the same amount; action 1 stays ahead.
pub fn protocol_fixture() -> Outcome {
    let o = ObservationKey::from_bytes(vec![9, 9]);
    let mut agents: Vec<Agent> = (0..3)
        .map(|i| Agent::new(i, 2, 0.0, BudgetState::new(10, 10), 99))
        .collect();
    agents[1].q.insert_row(o.clone(), vec![2.0, 0.0]).unwrap();
    agents[2].q.insert_row(o.clone(), vec![0.0, 1.0]).unwrap();
    agents[0].visits.set(o.clone(), 1);
    agents[1].visits.set(o.clone(), 4);
    agents[2].visits.set(o.clone(), 9);
    agents[2].budget.give_remaining = 1;
    let params = SharingParams {
        schedule: WeightSchedule::new(1, 0.0).unwrap(),
        tau: 0.5,
        upsilon_ask: 1e-15,
        temperature: 1.0,
    };
    let obs = vec![o.clone(), o.clone(), o.clone()];
    let out = sharing_round(&mut agents, &obs, 2, &params, Ablation::default())
        .map_err(|e| e.to_string())?;

    let e = std::f64::consts::E;
    let p1b = e * e / (e * e + 1.0);
    let p1w = 1.0 / (e * e + 1.0);
    let p2b = e / (1.0 + e);
    let p2w = 1.0 / (1.0 + e);
    let conf1 = p1b - p1w;
    let conf2 = p2b - p2w;
    let expected = [
        (0, 1, 0, p1b, 1, p1w, 2.0 * conf1),
        (0, 2, 1, p2b, 0, p2w, 3.0 * conf2),
        (2, 1, 0, p1b, 1, p1w, 2.0 * conf1),
    ];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    if out.requests.iter().map(|r| r.student).collect::<Vec<_>>() != vec![0, 1, 2] {
        return Err(format!("requests {:?}", out.requests));
    }
    if out.replies.len() != expected.len() {
        return Err(format!("{} replies, expected 3", out.replies.len()));
    }
    for ((student, r), &(s, t, b, pb, w, pw, l)) in out.replies.iter().zip(&expected) {
        if *student != s
            || r.teacher != t
            || r.best_action != b
            || r.worst_action != w
            || !close(r.best_prob, pb)
            || !close(r.worst_prob, pw)
            || !close(r.prestige, l)
        {
            return Err(format!("reply to {student} from {}: {r:?}", r.teacher));
        }
    }
    // intermediate values for the two students
    let a0 = [
        0.5 + 0.25 * (p1b - 0.5) + 0.25 * (p2w - 0.5),
        0.5 + 0.25 * (p2b - 0.5) + 0.25 * (p1w - 0.5),
    ];
    let a2 = [p2w + 0.25 * (p1b - p2w), p2b + 0.25 * (p1w - p2b)];
    if !(a0[0] > a0[1] && a2[1] > a2[0]) {
        return Err("hand trace arithmetic inconsistent".into());
    }
    if out.actions != vec![Some(0), None, Some(1)] {
        return Err(format!("actions {:?}", out.actions));
    }
    let budgets: Vec<(u64, u64)> = agents
        .iter()
        .map(|a| (a.budget.ask_remaining, a.budget.give_remaining))
        .collect();
    if budgets != vec![(9, 10), (10, 8), (9, 0)] {
        return Err(format!("budgets {budgets:?}"));
    }

    // a second round: agent 2 has no give budget left, agent 0 is now the
    // only one with nothing to offer, and budgets only go down
    let before = budgets;
    sharing_round(&mut agents, &obs, 3, &params, Ablation::default()).map_err(|e| e.to_string())?;
    for (a, (ask, give)) in agents.iter().zip(before) {
        if a.budget.ask_remaining > ask || a.budget.give_remaining > give {
            return Err("budget increased".into());
        }
    }
    if agents[2].budget.give_remaining != 0 {
        return Err("exhausted give budget was spent".into());
    }
    Ok("replies, budgets and actions match the hand trace".into())
}

/// Environment invariants over `episodes` random-policy episodes per task,
/// and the apple growth Monte Carlo over `growth_steps` steps.
pub fn environment_audits(episodes: usize, growth_steps: usize) -> Outcome {
    let g6 = audit_pgm(&PgmConfig::pgm6(), episodes, 1)?;
    let g3 = audit_pgm(&PgmConfig::pgm3(), episodes, 2)?;
    if g6 == 0 || g3 == 0 {
        return Err("no gold collected; the mining path was never exercised".into());
    }
    let t = audit_ft(&FtConfig::default(), episodes, 3)?;
    let w = audit_cleanup(&CleanupConfig::default(), episodes, 4)?;
    let (freq, trials) = apple_growth_frequency(growth_steps, 5);
    if (freq - 0.3).abs() > 0.01 {
        return Err(format!(
            "apple growth frequency {freq:.4} over {trials} cell-steps"
        ));
    }
    Ok(format!(
        "gold {g6}/{g3}, treasures {t}, max waste fraction {w:.3}, growth {freq:.4}"
    ))
}

/// Same seed twice gives byte-identical metrics; a run resumed from a
/// checkpoint reproduces the uninterrupted run's records.
pub fn determinism_and_resume(root: &Path, episodes: u64, algos: &[Algorithm]) -> Outcome {
    let envs = [
        EnvConfig::Pgm(PgmConfig::pgm3()),
        EnvConfig::Ft(FtConfig::default()),
        EnvConfig::Cleanup(CleanupConfig::default()),
    ];
    let mut checked = 0;
    for env in &envs {
        for &algo in algos {
            let tag = format!("{}-{}", env.kind(), algo);
            let mut c = ExperimentConfig::pgm3();
            c.env = env.clone();
            c.algo = algo;
            c.episodes = episodes;
            c.seeds = vec![11];
            c.sharing.start_episode = 3;
            c.sharing.ask_budget = 300;
            c.eval.interval = episodes / 4;
            c.eval.episodes = 2;
            c.output.record_wall_clock = false;
            let run = |sub: &str, c: &ExperimentConfig, resume| {
                let mut c = c.clone();
                c.output.dir = root.join(&tag).join(sub);
                train_seed(&c, 11, resume).map_err(|e| format!("{tag}: {e}"))
            };
            let a = run("a", &c, None)?;
            let b = run("b", &c, None)?;
            let bytes_a = std::fs::read(&a.metrics_path).map_err(|e| e.to_string())?;
            let bytes_b = std::fs::read(&b.metrics_path).map_err(|e| e.to_string())?;
            if bytes_a != bytes_b {
                return Err(format!("{tag}: metrics differ between identical runs"));
            }

            let k = episodes / 2;
            let mut first = c.clone();
            first.episodes = k;
            let part = run("part", &first, None)?;
            let ckpt = Checkpoint::load(&part.checkpoint_path).map_err(|e| e.to_string())?;
            let text = ckpt.to_text();
            let reloaded = Checkpoint::from_text(&text).map_err(|e| e.to_string())?;
            if reloaded.to_text() != text {
                return Err(format!("{tag}: checkpoint not byte-stable"));
            }
            let resumed = run("resumed", &c, Some(ckpt))?;
            let full = String::from_utf8(bytes_a).unwrap();
            let tail: Vec<&str> = full
                .lines()
                .skip(1)
                .filter(|l| {
                    l.split(',')
                        .nth(1)
                        .and_then(|e| e.parse::<u64>().ok())
                        .unwrap()
                        > k
                })
                .collect();
            let resumed_text =
                std::fs::read_to_string(&resumed.metrics_path).map_err(|e| e.to_string())?;
            let resumed_rows: Vec<&str> = resumed_text.lines().skip(1).collect();
            if tail != resumed_rows {
                return Err(format!(
                    "{tag}: resumed metrics diverge from the uninterrupted run"
                ));
            }
            let end_a = std::fs::read(checkpoint_path(&root.join(&tag).join("a"), 11)).unwrap();
            let end_r = std::fs::read(&resumed.checkpoint_path).unwrap();
            if end_a != end_r {
                return Err(format!("{tag}: final checkpoints differ after resume"));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} env/algorithm pairs, {episodes} episodes each"
    ))
}
