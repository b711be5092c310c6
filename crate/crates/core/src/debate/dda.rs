use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_scores, ask, should_expand, should_terminate, Answer, DebateContext, DebateError, RoundSignals};
use crate::agents::{
    render_prompt, AgentVerdict, Align, AttackVerdict, BackendError, JudgeVerdict, ParsedOutput, PromptContext, Role,
    Usage,
};
use crate::kg::{EntityId, Profile};
use crate::retrieval::{AlignmentDecision, CandidateSet, Provenance};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub rung: usize,
    pub k: usize,
    /// Debated subset in verification order.
    pub candidates: Vec<EntityId>,
    pub verdicts: Vec<AgentVerdict>,
    pub attacks: Vec<AttackVerdict>,
    pub judge: JudgeVerdict,
    /// Final totals, best first.
    pub totals: Vec<(EntityId, f64)>,
    pub signals: RoundSignals,
    pub expand: bool,
    pub terminate: bool,
    pub usage: Usage,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub schema_version: u32,
    pub source: EntityId,
    pub rounds: Vec<RoundRecord>,
    pub decision: AlignmentDecision,
    /// Debated subset by final total, then the remaining candidates in
    /// verification order.
    pub final_ranking: Vec<EntityId>,
    pub terminated: bool,
    /// A backend failed mid-debate; the decision is the last aggregate argmax.
    pub degraded: bool,
    pub failure: Option<String>,
    pub usage: Usage,
}

/// What later rounds and the judge see of earlier output.
#[derive(Serialize)]
struct RoundDigest<'a> {
    round: u32,
    specialists: &'a [AgentVerdict],
    attack: &'a [AttackVerdict],
    judge: &'a JudgeVerdict,
    totals: &'a [(EntityId, f64)],
}

impl<'a> From<&'a RoundRecord> for RoundDigest<'a> {
    fn from(r: &'a RoundRecord) -> Self {
        Self {
            round: r.round,
            specialists: &r.verdicts,
            attack: &r.attacks,
            judge: &r.judge,
            totals: &r.totals,
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("transcript values serialize")
}

struct Collected {
    usage: Usage,
    notes: Vec<String>,
    failure: Option<String>,
}

impl Collected {
    fn take(&mut self, role: Role, r: Result<Answer, (BackendError, Usage)>) -> Option<Answer> {
        match r {
            Ok(a) => {
                self.usage.add(a.usage);
                self.notes.extend(a.notes.iter().map(|n| format!("{role}: {n}")));
                Some(a)
            }
            Err((e, u)) => {
                self.usage.add(u);
                let msg = format!("{role}: backend failure: {e}");
                self.notes.push(msg.clone());
                self.failure.get_or_insert(msg);
                None
            }
        }
    }
}

/// Subset order: total, judge endorsement, prior, verification position.
fn rank_subset(
    subset: &[EntityId],
    totals: &BTreeMap<EntityId, f64>,
    prior: &BTreeMap<EntityId, f64>,
    endorse: Option<EntityId>,
) -> Vec<(EntityId, f64)> {
    let mut idx: Vec<usize> = (0..subset.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ca, cb) = (subset[a], subset[b]);
        totals[&cb]
            .total_cmp(&totals[&ca])
            .then((Some(cb) == endorse).cmp(&(Some(ca) == endorse)))
            .then(prior[&cb].total_cmp(&prior[&ca]))
            .then(a.cmp(&b))
    });
    idx.into_iter().map(|i| (subset[i], totals[&subset[i]])).collect()
}

/// Multi-round debate over the verification order `dprime`.
pub fn run_dda(e: EntityId, dprime: &CandidateSet, ctx: &DebateContext<'_>) -> Result<DebateTranscript, DebateError> {
    if dprime.is_empty() {
        return Err(DebateError::NoCandidates(e));
    }
    let cfg = ctx.cfg;
    let source = ctx.source_kg.entity_profile(e)?;
    let profiles: BTreeMap<EntityId, Profile> = dprime
        .targets()
        .into_iter()
        .map(|t| Ok((t, ctx.target_kg.entity_profile(t)?)))
        .collect::<Result<_, DebateError>>()?;
    let prior: BTreeMap<EntityId, f64> = dprime.candidates().iter().map(|c| (c.target, c.prior)).collect();

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut usage = Usage::default();
    let mut failure = None;
    let mut rung = 0usize;

    for round in 1..=cfg.max_rounds {
        let k = cfg.ladder[rung].min(dprime.len());
        let subset: Vec<EntityId> = dprime.prefix(k).iter().map(|c| c.target).collect();
        let cand_profiles: Vec<Profile> = subset.iter().map(|t| profiles[t].clone()).collect();
        let sub_prior: BTreeMap<EntityId, f64> = subset.iter().map(|t| (*t, prior[t])).collect();
        let prior_text = rounds.last().map(|r| to_json(&RoundDigest::from(r)));
        let base = PromptContext {
            source: Some(&source),
            candidates: &cand_profiles,
            round,
            prior_rounds: prior_text.as_deref(),
            ..Default::default()
        };
        let mut col = Collected {
            usage: Usage::default(),
            notes: Vec::new(),
            failure: None,
        };

        let prompts = Role::SPECIALISTS
            .iter()
            .map(|&r| Ok((r, render_prompt(r, &base)?)))
            .collect::<Result<Vec<_>, DebateError>>()?;
        let answers: Vec<_> = prompts
            .into_par_iter()
            .map(|(r, p)| (r, ask(ctx, r, e, &subset, p)))
            .collect();
        let mut verdicts = Vec::new();
        for (role, res) in answers {
            match col.take(role, res).and_then(|a| a.parsed) {
                Some(p) => match p.output {
                    ParsedOutput::Scores(v) => verdicts.extend(v),
                    _ => unreachable!("specialists parse to score lists"),
                },
                None => verdicts.extend(subset.iter().map(|&c| AgentVerdict::abstain(role, c))),
            }
        }

        let mut attacks: Vec<AttackVerdict> = subset.iter().map(|&c| AttackVerdict::none(c)).collect();
        let mut judge = JudgeVerdict::default();
        if col.failure.is_none() {
            let p = render_prompt(Role::Attack, &base)?;
            if let Some(ParsedOutput::Attacks(a)) =
                col.take(Role::Attack, ask(ctx, Role::Attack, e, &subset, p)).and_then(|a| a.parsed).map(|p| p.output)
            {
                attacks = a;
            }
        }
        if col.failure.is_none() {
            let sims: Vec<(EntityId, f64)> = sub_prior.iter().map(|(c, s)| (*c, *s)).collect();
            let outputs = to_json(&serde_json::json!({"specialists": &verdicts, "attack": &attacks}));
            let p = render_prompt(
                Role::Judge,
                &PromptContext {
                    similarity: Some(&sims),
                    agent_outputs: Some(&outputs),
                    ..base
                },
            )?;
            if let Some(ParsedOutput::Judge(j)) =
                col.take(Role::Judge, ask(ctx, Role::Judge, e, &subset, p)).and_then(|a| a.parsed).map(|p| p.output)
            {
                judge = j;
            }
        }
        usage.add(col.usage);
        if let Some(f) = col.failure {
            tracing::warn!(source = e.0, round, "debate degraded: {f}");
            failure = Some(f);
            break;
        }

        let agg = aggregate_scores(&verdicts, &attacks, Some(&judge), &sub_prior, cfg);
        let mut notes = col.notes;
        notes.extend(agg.rejected);
        let totals = rank_subset(&subset, &agg.totals, &sub_prior, judge.endorse);
        let (top, s1) = totals[0];
        let gap = s1 - totals.get(1).map_or(0.0, |t| t.1);
        let votes: Vec<&AgentVerdict> = verdicts
            .iter()
            .filter(|v| v.candidate == top && v.align != Align::Abstain)
            .collect();
        let signals = RoundSignals {
            round,
            rung,
            s1,
            gap,
            v_agree: votes.iter().filter(|v| v.align == Align::True).count() as u32,
            v: votes.len() as u32,
            judge: judge.align.unwrap_or(judge.endorse == Some(top)),
        };
        let terminate = should_terminate(&signals, cfg);
        let expand = !terminate && should_expand(&signals, cfg);
        rounds.push(RoundRecord {
            round,
            rung,
            k,
            candidates: subset,
            verdicts,
            attacks,
            judge,
            totals,
            signals,
            expand,
            terminate,
            usage: col.usage,
            notes,
        });
        if terminate {
            break;
        }
        if expand {
            rung += 1;
        }
    }

    let (head, decision) = match rounds.last() {
        Some(r) => {
            let (target, score) = r.totals[0];
            (
                r.totals.iter().map(|t| t.0).collect::<Vec<_>>(),
                AlignmentDecision {
                    source: e,
                    target,
                    score,
                    provenance: Provenance::Dda { round: r.round },
                },
            )
        }
        None => {
            let top = dprime.top().expect("non-empty");
            (
                vec![top.target],
                AlignmentDecision {
                    source: e,
                    target: top.target,
                    score: top.prior,
                    provenance: Provenance::Dda { round: 0 },
                },
            )
        }
    };
    let mut final_ranking = head.clone();
    final_ranking.extend(dprime.targets().into_iter().filter(|t| !head.contains(t)));
    Ok(DebateTranscript {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        source: e,
        terminated: rounds.last().is_some_and(|r| r.terminate),
        degraded: failure.is_some(),
        failure,
        rounds,
        decision,
        final_ranking,
        usage,
    })
}
