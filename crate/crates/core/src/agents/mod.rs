//! Agent roles, prompt rendering, backends and verdict parsing.

mod backend;
mod http;
mod parse;
mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{
    build_backend, call_agent, parse_fixtures, AbstainBackend, AgentBackend, AgentRequest,
    BackendConfig, BackendError, BackendKind, Fixture, OracleBackend, RawAgentOutput,
    RecordingBackend, ScriptedBackend, Usage,
};
pub use http::HttpBackend;
pub use parse::{
    parse_verdicts, Adjustment, AgentVerdict, Align, AttackVerdict, JudgeVerdict, ParseError,
    Parsed, ParsedOutput,
};
pub use prompt::{prompt_checksum, render_prompt, system_text, PromptContext, RenderError, RenderedPrompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proponent,
    Opponent,
    Referee,
    Alias,
    Type,
    Attribute,
    Neighborhood,
    Attack,
    Judge,
}

impl Role {
    pub const ALL: [Role; 9] = [
        Role::Proponent,
        Role::Opponent,
        Role::Referee,
        Role::Alias,
        Role::Type,
        Role::Attribute,
        Role::Neighborhood,
        Role::Attack,
        Role::Judge,
    ];

    pub const SPECIALISTS: [Role; 4] = [Role::Alias, Role::Type, Role::Attribute, Role::Neighborhood];

    pub const LDV: [Role; 3] = [Role::Proponent, Role::Opponent, Role::Referee];

    pub fn is_specialist(self) -> bool {
        Self::SPECIALISTS.contains(&self)
    }

    /// Roles whose output is `[{"candidate_id", "align_score"}]`.
    pub fn is_score_list(self) -> bool {
        Self::LDV.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Proponent => "proponent",
            Role::Opponent => "opponent",
            Role::Referee => "referee",
            Role::Alias => "alias",
            Role::Type => "type",
            Role::Attribute => "attribute",
            Role::Neighborhood => "neighborhood",
            Role::Attack => "attack",
            Role::Judge => "judge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}
