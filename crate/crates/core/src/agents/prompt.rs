use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{sha256_hex, Role};
use crate::kg::{EntityId, Profile};

const PROPONENT: &str = include_str!("../../prompts/proponent.txt");
const OPPONENT: &str = include_str!("../../prompts/opponent.txt");
const REFEREE: &str = include_str!("../../prompts/referee.txt");
const ALIAS: &str = include_str!("../../prompts/alias.txt");
const TYPE: &str = include_str!("../../prompts/type.txt");
const ATTRIBUTE: &str = include_str!("../../prompts/attribute.txt");
const NEIGHBORHOOD: &str = include_str!("../../prompts/neighborhood.txt");
const ATTACK: &str = include_str!("../../prompts/attack.txt");
const JUDGE: &str = include_str!("../../prompts/judge.txt");

const CANDIDATE_LIST: &str = "<CANDIDATE_ID_LIST>";

const SCORING_USER: &str = "Source entity [{{SOURCE_ID}}]\n{{SOURCE_PROFILE}}\n\n\
Candidate entities\n{{CANDIDATE_PROFILES}}";

const REFEREE_USER: &str = "Source entity [{{SOURCE_ID}}]\n{{SOURCE_PROFILE}}\n\n\
Candidate entities\n{{CANDIDATE_PROFILES}}\n\n\
Proponent and opponent assessments\n{{DEBATE_ARGUMENTS}}";

const DEBATER_USER: &str = "Source entity [{{SOURCE_ID}}]\n{{SOURCE_PROFILE}}\n\n\
Candidate entities\n{{CANDIDATE_PROFILES}}\n\n\
Previous round outputs\n{{PRIOR_ROUNDS}}";

const JUDGE_USER: &str = "Source entity [{{SOURCE_ID}}]\n{{SOURCE_PROFILE}}\n\n\
Candidate entities\n{{CANDIDATE_PROFILES}}\n\n\
Embedding similarity\n{{SIMILARITY}}\n\n\
Current round outputs\n{{AGENT_OUTPUTS}}\n\n\
Previous round outputs\n{{PRIOR_ROUNDS}}";

/// Verbatim role instructions, with `<CANDIDATE_ID_LIST>` unsubstituted.
pub fn system_text(role: Role) -> &'static str {
    match role {
        Role::Proponent => PROPONENT,
        Role::Opponent => OPPONENT,
        Role::Referee => REFEREE,
        Role::Alias => ALIAS,
        Role::Type => TYPE,
        Role::Attribute => ATTRIBUTE,
        Role::Neighborhood => NEIGHBORHOOD,
        Role::Attack => ATTACK,
        Role::Judge => JUDGE,
    }
}

/// SHA-256 of the role's instruction asset.
pub fn prompt_checksum(role: Role) -> String {
    sha256_hex(system_text(role).as_bytes())
}

fn user_template(role: Role) -> &'static str {
    match role {
        Role::Proponent | Role::Opponent => SCORING_USER,
        Role::Referee => REFEREE_USER,
        Role::Judge => JUDGE_USER,
        _ => DEBATER_USER,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("{role} prompt requires context field `{field}`")]
    MissingField { role: Role, field: &'static str },
    #[error("unknown placeholder `{0}` in template")]
    UnknownPlaceholder(String),
}

/// Everything a role's prompt may draw on. Optional sections render empty.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptContext<'a> {
    pub source: Option<&'a Profile>,
    pub candidates: &'a [Profile],
    /// 0 for the single verification round, 1.. for debate rounds.
    pub round: u32,
    pub debate_arguments: Option<&'a str>,
    pub prior_rounds: Option<&'a str>,
    pub similarity: Option<&'a [(EntityId, f64)]>,
    pub agent_outputs: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub role: Role,
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    /// Key used by scripted fixtures.
    pub fn sha256(&self) -> String {
        sha256_hex(self.full_text().as_bytes())
    }
}

/// Profile text restricted to what the role is allowed to judge on.
fn profile_view(role: Role, p: &Profile) -> String {
    match role {
        Role::Alias => format!("Name: {}", p.name),
        Role::Attribute => format!("Name: {}\nAttributes: {}", p.name, p.attribute_line()),
        Role::Neighborhood => format!("Name: {}\nRelations: {}", p.name, p.relation_line()),
        _ => p.render(),
    }
}

fn fill(template: &str, values: &BTreeMap<&str, String>) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| RenderError::UnknownPlaceholder(after.chars().take(32).collect()))?;
        let key = &after[..end];
        let v = values
            .get(key)
            .ok_or_else(|| RenderError::UnknownPlaceholder(key.to_string()))?;
        out.push_str(v);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt(role: Role, ctx: &PromptContext<'_>) -> Result<RenderedPrompt, RenderError> {
    let missing = |field| RenderError::MissingField { role, field };
    let source = ctx.source.ok_or(missing("source"))?;
    if ctx.candidates.is_empty() {
        return Err(missing("candidates"));
    }
    if role == Role::Referee && ctx.debate_arguments.is_none() {
        return Err(missing("debate_arguments"));
    }
    if role == Role::Attack && ctx.round >= 2 && ctx.prior_rounds.is_none() {
        return Err(missing("prior_rounds"));
    }
    if role == Role::Judge {
        ctx.similarity.ok_or(missing("similarity"))?;
        ctx.agent_outputs.ok_or(missing("agent_outputs"))?;
    }

    let mut ordered: Vec<&Profile> = ctx.candidates.iter().collect();
    ordered.sort_by_key(|p| p.entity);
    let id_list = ordered
        .iter()
        .map(|p| p.entity.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let candidate_block = ordered
        .iter()
        .map(|p| format!("[{}]\n{}", p.entity, profile_view(role, p)))
        .collect::<Vec<_>>()
        .join("\n\n");
    let similarity = ctx
        .similarity
        .unwrap_or_default()
        .iter()
        .map(|(id, s)| format!("[{id}] {s:.4}"))
        .collect::<Vec<_>>()
        .join("\n");

    let mut values = BTreeMap::new();
    values.insert("SOURCE_ID", source.entity.to_string());
    values.insert("SOURCE_PROFILE", profile_view(role, source));
    values.insert("CANDIDATE_PROFILES", candidate_block);
    values.insert("DEBATE_ARGUMENTS", ctx.debate_arguments.unwrap_or_default().to_string());
    values.insert("PRIOR_ROUNDS", ctx.prior_rounds.unwrap_or_default().to_string());
    values.insert("SIMILARITY", similarity);
    values.insert("AGENT_OUTPUTS", ctx.agent_outputs.unwrap_or_default().to_string());

    let system = system_text(role).replace(CANDIDATE_LIST, &id_list);
    let user = fill(user_template(role), &values)?;
    Ok(RenderedPrompt { role, system, user })
}
