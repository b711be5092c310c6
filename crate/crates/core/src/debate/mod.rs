//! Two-stage resolution of uncertain entities: a single verification round
//! (proponent, opponent, referee) over compressed profiles, then a
//! multi-round debate among specialists, an attacker and a judge over full
//! profiles with a growing candidate subset.

mod aggregate;
mod compress;
mod config;
mod dda;
mod ldv;
mod predicates;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate_scores, Aggregate};
pub use compress::{compress_profile, profile_tokens, token_budget, CompressedProfile, FrequencyTable};
pub use config::DebateConfig;
pub use dda::{run_dda, DebateTranscript, RoundRecord, TRANSCRIPT_SCHEMA_VERSION};
pub use ldv::{run_ldv, LdvOutcome};
pub use predicates::{should_expand, should_terminate, RoundSignals};

use crate::agents::{
    call_agent, parse_verdicts, AgentBackend, AgentRequest, BackendError, Parsed, RenderError, RenderedPrompt, Role,
    Usage,
};
use crate::kg::{EntityId, KgError, KnowledgeGraph};
use crate::retrieval::{AlignmentDecision, CandidateSet, Provenance};

#[derive(Debug, Error)]
pub enum DebateError {
    #[error("invalid debate config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("candidate set for {0} is empty")]
    NoCandidates(EntityId),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Backend per role; roles without an override use the default.
#[derive(Clone)]
pub struct Agents {
    default: Arc<dyn AgentBackend>,
    overrides: BTreeMap<Role, Arc<dyn AgentBackend>>,
}

impl Agents {
    pub fn uniform(backend: Arc<dyn AgentBackend>) -> Self {
        Self {
            default: backend,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_role(mut self, role: Role, backend: Arc<dyn AgentBackend>) -> Self {
        self.overrides.insert(role, backend);
        self
    }

    pub fn backend(&self, role: Role) -> &dyn AgentBackend {
        self.overrides.get(&role).unwrap_or(&self.default).as_ref()
    }
}

/// Read-only inputs shared by every debate.
pub struct DebateContext<'a> {
    pub source_kg: &'a KnowledgeGraph,
    pub target_kg: &'a KnowledgeGraph,
    pub freq: &'a FrequencyTable,
    pub cfg: &'a DebateConfig,
    pub agents: &'a Agents,
}

/// Result of one agent exchange after parse retries.
pub(crate) struct Answer {
    /// `None` when every reply was unparseable; callers substitute abstentions.
    pub parsed: Option<Parsed>,
    pub usage: Usage,
    pub notes: Vec<String>,
}

/// Calls `role` and parses its reply, re-asking up to `max_retries` times
/// on parse failure. Backend failures are returned as errors.
pub(crate) fn ask(
    ctx: &DebateContext<'_>,
    role: Role,
    source: EntityId,
    expected: &[EntityId],
    rendered: RenderedPrompt,
) -> Result<Answer, (BackendError, Usage)> {
    let req = AgentRequest {
        role,
        source,
        candidates: expected.to_vec(),
        prompt: rendered,
    };
    let mut usage = Usage::default();
    let mut notes = Vec::new();
    for _ in 0..=ctx.cfg.max_retries {
        let raw = match call_agent(ctx.agents.backend(role), &req) {
            Ok(r) => r,
            Err(e) => return Err((e, usage)),
        };
        usage.add(raw.usage);
        match parse_verdicts(&raw.text, expected, role) {
            Ok(p) => {
                notes.extend(p.warnings.iter().cloned());
                return Ok(Answer {
                    parsed: Some(p),
                    usage,
                    notes,
                });
            }
            Err(e) => notes.push(format!("{role}: unparseable reply ({e})")),
        }
    }
    tracing::warn!(%role, source = source.0, "no parseable reply; substituting abstentions");
    Ok(Answer {
        parsed: None,
        usage,
        notes,
    })
}

/// Outcome for one uncertain entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityOutcome {
    pub ldv: LdvOutcome,
    pub transcript: Option<DebateTranscript>,
    pub decision: AlignmentDecision,
    /// Full evaluated order: debated subset first, then the rest of the
    /// verification order.
    pub ranking: Vec<EntityId>,
}

impl EntityOutcome {
    /// Combines a verification outcome with the debate it led to, if any.
    pub fn from_parts(ldv: LdvOutcome, transcript: Option<DebateTranscript>) -> Self {
        let (decision, ranking) = match &transcript {
            Some(t) => (t.decision, t.final_ranking.clone()),
            None => {
                let top = ldv.reranked.top().expect("non-empty candidate set");
                (
                    AlignmentDecision {
                        source: ldv.source,
                        target: top.target,
                        score: top.score,
                        provenance: Provenance::Ldv,
                    },
                    ldv.reranked.targets(),
                )
            }
        };
        Self {
            ldv,
            transcript,
            decision,
            ranking,
        }
    }
}

/// Runs verification, and debate where forwarded, for one entity.
pub fn resolve_entity(cs: &CandidateSet, ctx: &DebateContext<'_>) -> Result<EntityOutcome, DebateError> {
    let ldv = run_ldv(cs.source, cs, ctx)?;
    let transcript = if ldv.forwarded {
        Some(run_dda(cs.source, &ldv.reranked, ctx)?)
    } else {
        None
    };
    Ok(EntityOutcome::from_parts(ldv, transcript))
}

/// Resolves every uncertain entity on a bounded worker pool. Output order
/// follows the input order regardless of scheduling.
pub fn resolve_all(sets: &[&CandidateSet], ctx: &DebateContext<'_>) -> Result<Vec<EntityOutcome>, DebateError> {
    ctx.cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.cfg.workers)
        .build()
        .map_err(|e| DebateError::Pool(e.to_string()))?;
    pool.install(|| sets.par_iter().map(|cs| resolve_entity(cs, ctx)).collect())
}
