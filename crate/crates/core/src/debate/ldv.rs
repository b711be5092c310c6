use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ask, compress_profile, Answer, DebateContext, DebateError};
use crate::agents::{render_prompt, AgentVerdict, Align, ParsedOutput, PromptContext, Role, Usage};
use crate::kg::{EntityId, Profile};
use crate::retrieval::{Candidate, CandidateOrigin, CandidateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdvOutcome {
    pub source: EntityId,
    pub reranked: CandidateSet,
    pub forwarded: bool,
    /// Forwarding clauses that fired.
    pub reasons: Vec<String>,
    /// All three agents failed; the original order was kept.
    pub failed: bool,
    pub proponent_top: Option<EntityId>,
    pub opponent_top: Option<EntityId>,
    pub referee_top: Option<EntityId>,
    pub referee_top_score: Option<f64>,
    pub verdicts: Vec<AgentVerdict>,
    pub usage: Usage,
    pub notes: Vec<String>,
}

/// Score per candidate from non-abstaining verdicts.
fn score_map(verdicts: &[AgentVerdict]) -> BTreeMap<EntityId, f64> {
    verdicts
        .iter()
        .filter(|v| v.align != Align::Abstain)
        .filter_map(|v| v.score.map(|s| (v.candidate, s)))
        .collect()
}

/// Highest score; ties go to the better embedding rank.
fn top_of(scores: &BTreeMap<EntityId, f64>, cs: &CandidateSet) -> Option<(EntityId, f64)> {
    cs.candidates()
        .iter()
        .filter_map(|c| scores.get(&c.target).map(|&s| (c.target, s)))
        .fold(None, |best, (t, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((t, s)),
        })
}

fn scores_of(answer: &Option<Answer>) -> Vec<AgentVerdict> {
    match answer.as_ref().and_then(|a| a.parsed.as_ref()).map(|p| &p.output) {
        Some(ParsedOutput::Scores(v)) => v.clone(),
        _ => Vec::new(),
    }
}

fn arguments(role: Role, verdicts: &[AgentVerdict], answered: bool) -> String {
    if !answered {
        return format!("{role}: no output");
    }
    let list: Vec<_> = verdicts
        .iter()
        .map(|v| serde_json::json!({"candidate_id": v.candidate.0.to_string(), "align_score": v.score}))
        .collect();
    format!("{role}: {}", serde_json::Value::Array(list))
}

/// Single verification round over compressed profiles. Reranks by referee
/// score and forwards the entity to the debate stage on disagreement or low
/// referee confidence.
pub fn run_ldv(e: EntityId, cs: &CandidateSet, ctx: &DebateContext<'_>) -> Result<LdvOutcome, DebateError> {
    if cs.is_empty() {
        return Err(DebateError::NoCandidates(e));
    }
    let cfg = ctx.cfg;
    let source = compress_profile(&ctx.source_kg.entity_profile(e)?, ctx.freq, cfg).profile;
    let candidates: Vec<Profile> = cs
        .targets()
        .into_iter()
        .map(|t| Ok(compress_profile(&ctx.target_kg.entity_profile(t)?, ctx.freq, cfg).profile))
        .collect::<Result<_, DebateError>>()?;
    let expected = cs.targets();
    let base = PromptContext {
        source: Some(&source),
        candidates: &candidates,
        round: 0,
        ..Default::default()
    };

    let pro_prompt = render_prompt(Role::Proponent, &base)?;
    let opp_prompt = render_prompt(Role::Opponent, &base)?;
    let (pro, opp) = rayon::join(
        || ask(ctx, Role::Proponent, e, &expected, pro_prompt),
        || ask(ctx, Role::Opponent, e, &expected, opp_prompt),
    );
    let mut usage = Usage::default();
    let mut notes = Vec::new();
    let mut settle = |r: Result<Answer, (crate::agents::BackendError, Usage)>, role: Role| match r {
        Ok(a) => {
            usage.add(a.usage);
            notes.extend(a.notes.iter().map(|n| format!("{role}: {n}")));
            Some(a)
        }
        Err((err, u)) => {
            usage.add(u);
            notes.push(format!("{role}: backend failure: {err}"));
            None
        }
    };
    let pro = settle(pro, Role::Proponent);
    let opp = settle(opp, Role::Opponent);
    let pro_v = scores_of(&pro);
    let opp_v = scores_of(&opp);

    let debate_arguments = format!(
        "{}\n{}",
        arguments(Role::Proponent, &pro_v, pro.is_some()),
        arguments(Role::Opponent, &opp_v, opp.is_some())
    );
    let ref_prompt = render_prompt(
        Role::Referee,
        &PromptContext {
            debate_arguments: Some(&debate_arguments),
            ..base
        },
    )?;
    let referee = settle(ask(ctx, Role::Referee, e, &expected, ref_prompt), Role::Referee);
    let ref_v = scores_of(&referee);

    let mut verdicts = pro_v.clone();
    verdicts.extend(opp_v.iter().cloned());
    verdicts.extend(ref_v.iter().cloned());

    if pro.is_none() && opp.is_none() && referee.is_none() {
        tracing::warn!(source = e.0, "all verification agents failed; forwarding with original order");
        return Ok(LdvOutcome {
            source: e,
            reranked: cs.clone(),
            forwarded: true,
            reasons: vec!["all agents failed".into()],
            failed: true,
            proponent_top: None,
            opponent_top: None,
            referee_top: None,
            referee_top_score: None,
            verdicts,
            usage,
            notes,
        });
    }

    let ref_scores = score_map(&ref_v);
    let mut ranked: Vec<(usize, Candidate, Option<f64>)> = cs
        .candidates()
        .iter()
        .enumerate()
        .map(|(i, c)| (i, *c, ref_scores.get(&c.target).copied()))
        .collect();
    // Scored before unscored, then referee score, prior, embedding position.
    ranked.sort_by(|a, b| {
        b.2.is_some()
            .cmp(&a.2.is_some())
            .then(b.2.unwrap_or(0.0).total_cmp(&a.2.unwrap_or(0.0)))
            .then(b.1.prior.total_cmp(&a.1.prior))
            .then(a.0.cmp(&b.0))
    });
    let reranked = CandidateSet::from_ordered(
        e,
        ranked
            .iter()
            .map(|(_, c, s)| Candidate {
                target: c.target,
                score: s.unwrap_or(0.0),
                prior: c.prior,
            })
            .collect(),
        CandidateOrigin::LdvRerank,
    );

    let referee_top = top_of(&ref_scores, cs);
    let proponent_top = top_of(&score_map(&pro_v), cs).map(|t| t.0);
    let opponent_top = top_of(&score_map(&opp_v), cs).map(|t| t.0);
    let ref_id = referee_top.map(|t| t.0);
    let embedding_top = cs.top().map(|c| c.target);

    let mut reasons = Vec::new();
    if ref_id.is_none() || ref_id != embedding_top {
        reasons.push("referee top differs from embedding top".to_string());
    }
    if proponent_top.is_none() || proponent_top != ref_id {
        reasons.push("proponent top differs from referee top".to_string());
    }
    if opponent_top.is_none() || opponent_top != ref_id {
        reasons.push("opponent top differs from referee top".to_string());
    }
    if referee_top.is_none_or(|(_, s)| s < cfg.ldv_confidence_floor) {
        reasons.push("referee confidence below floor".to_string());
    }

    Ok(LdvOutcome {
        source: e,
        reranked,
        forwarded: !reasons.is_empty(),
        reasons,
        failed: false,
        proponent_top,
        opponent_top,
        referee_top: ref_id,
        referee_top_score: referee_top.map(|t| t.1),
        verdicts,
        usage,
        notes,
    })
}
