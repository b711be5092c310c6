use std::collections::BTreeMap;

use crate::agents::{AgentVerdict, AttackVerdict, JudgeVerdict};
use crate::kg::EntityId;

use super::DebateConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub totals: BTreeMap<EntityId, f64>,
    /// Inputs naming candidates outside the prior map.
    pub rejected: Vec<String>,
}

/// `w_sim * prior + w_agents * mean(scores) - penalty + sum(clamped deltas)`
/// per candidate. The agent term falls back to the prior when every
/// specialist abstained.
pub fn aggregate_scores(
    verdicts: &[AgentVerdict],
    attacks: &[AttackVerdict],
    judge: Option<&JudgeVerdict>,
    sim_prior: &BTreeMap<EntityId, f64>,
    cfg: &DebateConfig,
) -> Aggregate {
    let mut rejected = Vec::new();
    let mut scores: BTreeMap<EntityId, Vec<f64>> = BTreeMap::new();
    for v in verdicts {
        if !sim_prior.contains_key(&v.candidate) {
            rejected.push(format!("{} verdict for unknown candidate {}", v.agent_role, v.candidate));
            continue;
        }
        if let (Some(s), true) = (v.score, v.align != crate::agents::Align::Abstain) {
            scores.entry(v.candidate).or_default().push(s);
        }
    }
    let mut penalty: BTreeMap<EntityId, f64> = BTreeMap::new();
    for a in attacks {
        if !sim_prior.contains_key(&a.candidate) {
            rejected.push(format!("attack on unknown candidate {}", a.candidate));
            continue;
        }
        *penalty.entry(a.candidate).or_default() += a.penalty;
    }
    let mut deltas: BTreeMap<EntityId, f64> = BTreeMap::new();
    for adj in judge.map(|j| j.adjustments.as_slice()).unwrap_or_default() {
        if !sim_prior.contains_key(&adj.candidate) {
            rejected.push(format!("adjustment for unknown candidate {}", adj.candidate));
            continue;
        }
        let c = cfg.judge_delta_clamp;
        *deltas.entry(adj.candidate).or_default() += adj.delta.clamp(-c, c);
    }
    for r in &rejected {
        tracing::warn!("{r}");
    }

    let totals = sim_prior
        .iter()
        .map(|(&c, &prior)| {
            let agent = match scores.get_mut(&c) {
                Some(s) if !s.is_empty() => {
                    // Sorted so the float sum does not depend on arrival order.
                    s.sort_by(f64::total_cmp);
                    s.iter().sum::<f64>() / s.len() as f64
                }
                _ => prior,
            };
            let total = cfg.w_sim * prior + cfg.w_agents * agent - penalty.get(&c).copied().unwrap_or(0.0)
                + deltas.get(&c).copied().unwrap_or(0.0);
            (c, total)
        })
        .collect();
    Aggregate { totals, rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Adjustment, Align, Role};

    fn verdict(role: Role, c: u64, score: Option<f64>, align: Align) -> AgentVerdict {
        AgentVerdict { agent_role: role, candidate: EntityId(c), score, align, evidence: String::new() }
    }

    #[test]
    fn worked_example() {
        let prior = BTreeMap::from([(EntityId(1), 0.5)]);
        let v = [
            verdict(Role::Alias, 1, Some(0.8), Align::True),
            verdict(Role::Type, 1, Some(0.6), Align::True),
        ];
        let a = [AttackVerdict { candidate: EntityId(1), issues: vec![], evidence: String::new(), penalty: 0.1 }];
        let j = JudgeVerdict {
            endorse: Some(EntityId(1)),
            adjustments: vec![Adjustment { candidate: EntityId(1), delta: 0.05, note: String::new() }],
            align: None,
        };
        let out = aggregate_scores(&v, &a, Some(&j), &prior, &DebateConfig::default());
        assert!((out.totals[&EntityId(1)] - 0.59).abs() < 1e-12);
    }

    #[test]
    fn abstain_collapses_to_prior() {
        let prior = BTreeMap::from([(EntityId(1), 0.37), (EntityId(2), 0.81)]);
        let v = [verdict(Role::Alias, 1, None, Align::Abstain), verdict(Role::Alias, 2, Some(0.9), Align::Abstain)];
        let cfg = DebateConfig { w_sim: 1.0, w_agents: 0.0, ..Default::default() };
        assert_eq!(aggregate_scores(&v, &[], None, &prior, &cfg).totals, prior);
        // Default blend also reproduces the prior when nobody votes.
        let out = aggregate_scores(&v, &[], None, &prior, &DebateConfig::default());
        for (c, p) in &prior {
            assert!((out.totals[c] - p).abs() < 1e-15);
        }
    }

    #[test]
    fn deltas_clamped_and_unknowns_rejected() {
        let prior = BTreeMap::from([(EntityId(1), 0.0)]);
        let j = JudgeVerdict {
            endorse: None,
            adjustments: vec![
                Adjustment { candidate: EntityId(1), delta: 0.9, note: String::new() },
                Adjustment { candidate: EntityId(5), delta: 0.1, note: String::new() },
            ],
            align: None,
        };
        let cfg = DebateConfig { w_sim: 1.0, w_agents: 0.0, ..Default::default() };
        let out = aggregate_scores(&[verdict(Role::Type, 9, Some(1.0), Align::True)], &[], Some(&j), &prior, &cfg);
        assert!((out.totals[&EntityId(1)] - 0.2).abs() < 1e-15);
        assert_eq!(out.rejected.len(), 2);
    }

    #[test]
    fn order_invariant() {
        let prior = BTreeMap::from([(EntityId(1), 0.3), (EntityId(2), 0.6)]);
        let mut v = vec![
            verdict(Role::Alias, 1, Some(0.1), Align::False),
            verdict(Role::Type, 1, Some(0.7), Align::True),
            verdict(Role::Attribute, 1, Some(0.33), Align::False),
            verdict(Role::Neighborhood, 2, Some(0.9), Align::True),
        ];
        let cfg = DebateConfig::default();
        let a = aggregate_scores(&v, &[], None, &prior, &cfg);
        v.reverse();
        assert_eq!(a, aggregate_scores(&v, &[], None, &prior, &cfg));
    }
}
