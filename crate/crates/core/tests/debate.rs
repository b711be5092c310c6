use std::collections::BTreeMap;
use std::sync::Arc;

use kgalign_core::agents::{
    parse_fixtures, AgentBackend, AgentRequest, BackendError, OracleBackend, RawAgentOutput, RecordingBackend, Role,
    ScriptedBackend, Usage,
};
use kgalign_core::debate::{resolve_all, resolve_entity, Agents, DebateConfig, DebateContext, EntityOutcome, FrequencyTable};
use kgalign_core::kg::{AttributeTriple, EntityId, KnowledgeGraph, RelationTriple, Side};
use kgalign_core::retrieval::{Candidate, CandidateOrigin, CandidateSet, Provenance};
use serde_json::json;

struct Programmed<F>(F);

impl<F> AgentBackend for Programmed<F>
where
    F: std::ops::Fn(Role, &[EntityId]) -> String + Send + Sync,
{
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let text = (self.0)(req.role, &req.candidates);
        Ok(RawAgentOutput {
            usage: Usage::estimated(&req.prompt, &text),
            text,
        })
    }
}

fn graphs(sources: u64) -> (KnowledgeGraph, KnowledgeGraph) {
    let src: BTreeMap<EntityId, String> = (0..sources).map(|i| (EntityId(i), format!("City {i}"))).collect();
    let tgt: BTreeMap<EntityId, String> = (100..130).map(|i| (EntityId(i), format!("Town {i}"))).collect();
    let attrs = |ids: Vec<EntityId>| -> Vec<AttributeTriple> {
        ids.into_iter()
            .flat_map(|e| {
                ["country", "population"].into_iter().map(move |a| AttributeTriple {
                    entity: e,
                    attribute: a.into(),
                    value: format!("{a} of {}", e.0),
                })
            })
            .collect()
    };
    let rels = |ids: &[EntityId]| -> Vec<RelationTriple> {
        ids.windows(2)
            .map(|w| RelationTriple {
                head: w[0],
                relation: "near".into(),
                tail: w[1],
            })
            .collect()
    };
    let s_ids: Vec<EntityId> = src.keys().copied().collect();
    let t_ids: Vec<EntityId> = tgt.keys().copied().collect();
    (
        KnowledgeGraph::from_parts(Side::Source, src, rels(&s_ids), attrs(s_ids.clone())).unwrap(),
        KnowledgeGraph::from_parts(Side::Target, tgt, rels(&t_ids), attrs(t_ids.clone())).unwrap(),
    )
}

/// Twenty candidates for `source`, target 100 first, priors falling by 0.01.
fn candidates(source: u64, top_prior: f64) -> CandidateSet {
    let cands = (0..20)
        .map(|i| {
            let p = top_prior - 0.01 * i as f64;
            Candidate {
                target: EntityId(100 + i),
                score: p,
                prior: p,
            }
        })
        .collect();
    CandidateSet::new(EntityId(source), cands, CandidateOrigin::Embedding)
}

fn run(cs: &CandidateSet, agents: &Agents, cfg: &DebateConfig) -> EntityOutcome {
    let (s, t) = graphs(4);
    let freq = FrequencyTable::from_graphs(&[&s, &t]);
    let ctx = DebateContext {
        source_kg: &s,
        target_kg: &t,
        freq: &freq,
        cfg,
        agents,
    };
    resolve_entity(cs, &ctx).unwrap()
}

#[test]
fn oracle_overrides_wrong_embedding_top() {
    let truth = BTreeMap::from([(EntityId(0), EntityId(101))]);
    let agents = Agents::uniform(Arc::new(OracleBackend::new(truth)));
    let out = run(&candidates(0, 0.9), &agents, &DebateConfig::default());
    assert!(out.ldv.forwarded);
    assert_eq!(out.decision.target, EntityId(101));
    assert_eq!(out.decision.provenance, Provenance::Dda { round: 1 });
    let t = out.transcript.unwrap();
    assert_eq!(t.rounds.len(), 1);
    assert!(t.terminated && !t.degraded);
    assert_eq!(out.ranking[0], EntityId(101));
}

#[test]
fn oracle_confirms_correct_top_in_verification() {
    let truth = BTreeMap::from([(EntityId(0), EntityId(100))]);
    let agents = Agents::uniform(Arc::new(OracleBackend::new(truth)));
    let out = run(&candidates(0, 0.9), &agents, &DebateConfig::default());
    assert!(!out.ldv.forwarded);
    assert!(out.transcript.is_none());
    assert_eq!(out.decision.target, EntityId(100));
    assert_eq!(out.decision.provenance, Provenance::Ldv);
}

fn abstainers() -> Agents {
    Agents::uniform(Arc::new(kgalign_core::agents::AbstainBackend))
}

#[test]
fn abstention_walks_the_ladder() {
    let cs = candidates(0, 0.3);
    for (rounds, ks) in [(3, vec![5, 10, 15]), (4, vec![5, 10, 15, 20]), (5, vec![5, 10, 15, 20, 20])] {
        let cfg = DebateConfig {
            max_rounds: rounds,
            ..Default::default()
        };
        let out = run(&cs, &abstainers(), &cfg);
        let t = out.transcript.expect("abstaining verifier forwards");
        let got: Vec<usize> = t.rounds.iter().map(|r| r.k).collect();
        assert_eq!(got, ks, "rounds={rounds}");
        assert!(t.rounds[..t.rounds.len() - 1].iter().all(|r| !r.terminate));
        let last = t.rounds.last().unwrap();
        assert!(last.terminate && !last.expand);
        // Nobody spoke, so the embedding order stands.
        assert_eq!(out.decision.target, EntityId(100));
        assert_eq!(out.ranking, cs.targets());
    }
}

#[test]
fn confident_prior_does_not_expand() {
    let out = run(&candidates(0, 0.9), &abstainers(), &DebateConfig::default());
    let t = out.transcript.unwrap();
    assert!(t.rounds.iter().all(|r| r.k == 5));
}

/// Specialists tie 100 and 101; the attack penalizes 100 and the judge
/// endorses 101. Verification agents stay silent so the entity is debated.
fn flip_response(role: Role, cands: &[EntityId], with_attack: bool) -> String {
    let id = |c: &EntityId| c.0.to_string();
    match role {
        Role::Proponent | Role::Opponent | Role::Referee => "[]".into(),
        r if r.is_specialist() => json!(cands
            .iter()
            .map(|c| {
                let hi = c.0 <= 101;
                json!({"candidate_id": id(c), "score": if hi { 0.8 } else { 0.1 }, "align": hi, "evidence": "profile"})
            })
            .collect::<Vec<_>>())
        .to_string(),
        Role::Attack => json!(cands
            .iter()
            .filter(|c| with_attack && c.0 == 100)
            .map(|c| json!({"candidate_id": id(c), "issues": ["founding year conflicts"], "evidence": "1850 vs 1901", "penalty": 0.3}))
            .collect::<Vec<_>>())
        .to_string(),
        _ => json!({"endorse": "101", "adjustments": [], "align": true}).to_string(),
    }
}

#[test]
fn attack_flips_decision_and_replays_from_fixtures() {
    let cs = candidates(0, 0.4);
    let cfg = DebateConfig::default();

    let silent = Agents::uniform(Arc::new(Programmed(|r: Role, c: &[EntityId]| flip_response(r, c, false))));
    let without = run(&cs, &silent, &cfg);
    assert_eq!(without.decision.target, EntityId(100));

    let rec = Arc::new(RecordingBackend::new(Arc::new(Programmed(|r: Role, c: &[EntityId]| flip_response(r, c, true)))));
    let live = run(&cs, &Agents::uniform(rec.clone()), &cfg);
    assert_eq!(live.decision.target, EntityId(101));
    let t = live.transcript.as_ref().unwrap();
    let totals: BTreeMap<EntityId, f64> = t.rounds[0].totals.iter().copied().collect();
    // 0.3 * prior + 0.7 * 0.8, minus the penalty for 100.
    assert!((totals[&EntityId(100)] - (0.3 * 0.4 + 0.56 - 0.3)).abs() < 1e-12);
    assert!((totals[&EntityId(101)] - (0.3 * 0.39 + 0.56)).abs() < 1e-12);

    let fixtures = parse_fixtures(&rec.to_jsonl(), "recorded").unwrap();
    let replayed = run(&cs, &Agents::uniform(Arc::new(ScriptedBackend::new(fixtures))), &cfg);
    assert_eq!(
        serde_json::to_string(&replayed.transcript).unwrap(),
        serde_json::to_string(&live.transcript).unwrap()
    );
    assert_eq!(replayed.decision, live.decision);
}

#[test]
fn backend_failure_degrades_without_aborting() {
    struct Down;
    impl AgentBackend for Down {
        fn call(&self, _: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
            Err(BackendError::Network {
                attempts: 1,
                message: "refused".into(),
            })
        }
    }
    let out = run(&candidates(0, 0.9), &Agents::uniform(Arc::new(Down)), &DebateConfig::default());
    assert!(out.ldv.failed && out.ldv.forwarded);
    let t = out.transcript.unwrap();
    assert!(t.degraded);
    assert_eq!(out.decision.target, EntityId(100));
    assert_eq!(out.decision.provenance, Provenance::Dda { round: 0 });
}

#[test]
fn parallel_resolution_is_deterministic() {
    let truth: BTreeMap<EntityId, EntityId> = (0..4).map(|i| (EntityId(i), EntityId(100 + (i % 3)))).collect();
    let agents = Agents::uniform(Arc::new(OracleBackend::new(truth)));
    let sets: Vec<CandidateSet> = (0..4).map(|i| candidates(i, 0.3 + 0.1 * i as f64)).collect();
    let refs: Vec<&CandidateSet> = sets.iter().collect();
    let (s, t) = graphs(4);
    let freq = FrequencyTable::from_graphs(&[&s, &t]);
    let dump = |workers: usize| {
        let cfg = DebateConfig {
            workers,
            ..Default::default()
        };
        let ctx = DebateContext {
            source_kg: &s,
            target_kg: &t,
            freq: &freq,
            cfg: &cfg,
            agents: &agents,
        };
        let outs = resolve_all(&refs, &ctx).unwrap();
        outs.iter()
            .map(|o| serde_json::to_string(&(&o.ldv, &o.transcript)).unwrap())
            .collect::<Vec<_>>()
    };
    let a = dump(1);
    assert_eq!(a, dump(4));
    assert_eq!(a, dump(4));
}
