//! Structured-verdict extraction from free-form model output.
//!
//! Fences and surrounding prose are stripped, the first JSON value that
//! parses is taken (after at most one bracket-balancing repair), and the
//! result is reconciled against the expected candidate ids: missing ids are
//! filled as abstentions, unknown ids dropped, scores clamped to [0, 1].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::Role;
use crate::kg::EntityId;

const SPECIALIST_EVIDENCE_MAX: usize = 20;
const ATTACK_EVIDENCE_MAX: usize = 50;
const JUDGE_NOTE_MAX: usize = 40;
const MAX_START_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Align {
    True,
    False,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentVerdict {
    pub agent_role: Role,
    pub candidate: EntityId,
    pub score: Option<f64>,
    pub align: Align,
    pub evidence: String,
}

impl AgentVerdict {
    pub fn abstain(agent_role: Role, candidate: EntityId) -> Self {
        Self {
            agent_role,
            candidate,
            score: None,
            align: Align::Abstain,
            evidence: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub candidate: EntityId,
    pub issues: Vec<String>,
    pub evidence: String,
    pub penalty: f64,
}

impl AttackVerdict {
    pub fn none(candidate: EntityId) -> Self {
        Self {
            candidate,
            issues: Vec::new(),
            evidence: String::new(),
            penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub candidate: EntityId,
    pub delta: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub endorse: Option<EntityId>,
    pub adjustments: Vec<Adjustment>,
    /// Explicit alignment flag when the model supplies one (`align`/`verdict`).
    pub align: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum ParsedOutput {
    Scores(Vec<AgentVerdict>),
    Attacks(Vec<AttackVerdict>),
    Judge(JudgeVerdict),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parsed {
    pub output: ParsedOutput,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no expected candidate ids supplied")]
    NoExpectedIds,
    #[error("no JSON value found in output")]
    NoJson,
    #[error("output is not valid JSON even after repair: {0}")]
    Invalid(String),
    #[error("unexpected JSON shape for {role}: {detail}")]
    Shape { role: Role, detail: String },
}

pub fn parse_verdicts(raw: &str, expected: &[EntityId], role: Role) -> Result<Parsed, ParseError> {
    if expected.is_empty() {
        return Err(ParseError::NoExpectedIds);
    }
    let value = extract_json(raw)?;
    let mut warnings = Vec::new();
    let output = match role {
        Role::Judge => ParsedOutput::Judge(judge(value, expected, &mut warnings)?),
        Role::Attack => ParsedOutput::Attacks(attacks(items(value, role)?, expected, &mut warnings)),
        _ => ParsedOutput::Scores(scores(items(value, role)?, expected, role, &mut warnings)),
    };
    for w in &warnings {
        tracing::debug!(%role, warning = %w, "verdict repair");
    }
    Ok(Parsed { output, warnings })
}

fn strip_fences(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // Skip the info string (e.g. `json`) up to the end of the fence line.
    let body = match after.find('\n') {
        Some(nl) if after[..nl].chars().all(|c| c.is_ascii_alphanumeric() || c.is_whitespace()) => {
            &after[nl + 1..]
        }
        _ => after.trim_start_matches(|c: char| c.is_ascii_alphabetic()),
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Returns the end (exclusive) of the balanced value starting at `start`, if any.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

/// Single bracket-balancing pass: cut at the first mismatched closer, close
/// an open string, drop a dangling comma or key and append missing closers.
fn repair(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 8);
    let mut stack: Vec<char> = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    for c in s.chars() {
        if in_str {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' => stack.push(']'),
            '{' => stack.push('}'),
            ']' | '}' => {
                if stack.last() != Some(&c) {
                    break;
                }
                stack.pop();
                out.push(c);
                if stack.is_empty() {
                    return out;
                }
                continue;
            }
            _ => {}
        }
        out.push(c);
    }
    if in_str {
        if escaped {
            out.pop();
        }
        out.push('"');
    }
    loop {
        let trimmed = out.trim_end();
        if trimmed.ends_with(',') || trimmed.ends_with(':') {
            let cut = trimmed.len() - 1;
            if trimmed.ends_with(':') {
                out.truncate(cut);
                out.push_str(": null");
                break;
            }
            out.truncate(cut);
        } else {
            out.truncate(trimmed.len());
            break;
        }
    }
    while let Some(c) = stack.pop() {
        out.push(c);
    }
    out
}

fn extract_json(raw: &str) -> Result<Value, ParseError> {
    let body = strip_fences(raw);
    let starts: Vec<usize> = body
        .char_indices()
        .filter(|(_, c)| *c == '[' || *c == '{')
        .map(|(i, _)| i)
        .take(MAX_START_ATTEMPTS)
        .collect();
    if starts.is_empty() {
        return Err(ParseError::NoJson);
    }
    let mut last_err = String::new();
    for &start in &starts {
        if let Some(end) = balanced_end(body, start) {
            match serde_json::from_str::<Value>(&body[start..end]) {
                Ok(v) => return Ok(v),
                Err(e) => last_err = e.to_string(),
            }
        }
    }
    // Nothing balanced parsed; one repair attempt from the first opener.
    let repaired = repair(&body[starts[0]..]);
    serde_json::from_str::<Value>(&repaired).map_err(|e| {
        ParseError::Invalid(if last_err.is_empty() { e.to_string() } else { last_err })
    })
}

fn items(value: Value, role: Role) -> Result<Vec<Value>, ParseError> {
    match value {
        Value::Array(items) => Ok(items),
        Value::Object(map) if map.contains_key("candidate_id") => Ok(vec![Value::Object(map)]),
        Value::Object(map) => map
            .into_iter()
            .find_map(|(_, v)| match v {
                Value::Array(items) => Some(items),
                _ => None,
            })
            .ok_or_else(|| ParseError::Shape {
                role,
                detail: "object without a candidate array".into(),
            }),
        other => Err(ParseError::Shape {
            role,
            detail: format!("expected an array, found {}", kind_of(&other)),
        }),
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn as_id(v: &Value) -> Option<EntityId> {
    match v {
        Value::Number(n) => n.as_u64().or_else(|| {
            n.as_f64()
                .filter(|f| f.fract() == 0.0 && *f >= 0.0 && *f < u64::MAX as f64)
                .map(|f| f as u64)
        }),
        Value::String(s) => s.trim().trim_start_matches('#').parse().ok(),
        _ => None,
    }
    .map(EntityId)
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|f| f.is_finite())
}

fn clamp_unit(x: f64, what: &str, id: EntityId, warnings: &mut Vec<String>) -> f64 {
    if (0.0..=1.0).contains(&x) {
        x
    } else {
        let c = x.clamp(0.0, 1.0);
        warnings.push(format!("{what} {x} for candidate {id} clamped to {c}"));
        c
    }
}

fn bounded_text(v: Option<&Value>, max: usize, id: EntityId, warnings: &mut Vec<String>) -> String {
    let s = match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    if s.chars().count() > max {
        warnings.push(format!("text for candidate {id} truncated to {max} characters"));
        s.chars().take(max).collect()
    } else {
        s
    }
}

fn as_align(v: Option<&Value>) -> Option<Align> {
    match v? {
        Value::Bool(true) => Some(Align::True),
        Value::Bool(false) => Some(Align::False),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(Align::True),
            "false" | "no" => Some(Align::False),
            "abstain" => Some(Align::Abstain),
            _ => None,
        },
        _ => None,
    }
}

/// Keeps the first object per expected id, in the order the model emitted them.
fn keyed_objects(
    items: Vec<Value>,
    expected: &[EntityId],
    warnings: &mut Vec<String>,
) -> BTreeMap<EntityId, Map<String, Value>> {
    let mut out = BTreeMap::new();
    for item in items {
        let Value::Object(obj) = item else {
            warnings.push(format!("dropped non-object entry ({})", kind_of(&item)));
            continue;
        };
        let Some(id) = obj.get("candidate_id").and_then(as_id) else {
            warnings.push("dropped entry without a usable candidate_id".into());
            continue;
        };
        if !expected.contains(&id) {
            warnings.push(format!("dropped unexpected candidate {id}"));
            continue;
        }
        if out.contains_key(&id) {
            warnings.push(format!("dropped duplicate entry for candidate {id}"));
            continue;
        }
        out.insert(id, obj);
    }
    out
}

fn scores(items: Vec<Value>, expected: &[EntityId], role: Role, warnings: &mut Vec<String>) -> Vec<AgentVerdict> {
    let mut found = keyed_objects(items, expected, warnings);
    expected
        .iter()
        .map(|&id| {
            let Some(obj) = found.remove(&id) else {
                warnings.push(format!("candidate {id} missing; filled as abstain"));
                return AgentVerdict::abstain(role, id);
            };
            let raw_score = obj.get("align_score").or_else(|| obj.get("score"));
            let score = match raw_score {
                None | Some(Value::Null) => None,
                Some(v) => match as_number(v) {
                    Some(x) => Some(clamp_unit(x, "score", id, warnings)),
                    None => {
                        warnings.push(format!("unreadable score for candidate {id}"));
                        None
                    }
                },
            };
            let align = if role.is_score_list() {
                // Probability-only schema: the binary reading of the score.
                match score {
                    Some(s) if s >= 0.5 => Align::True,
                    Some(_) => Align::False,
                    None => Align::Abstain,
                }
            } else {
                as_align(obj.get("align")).unwrap_or_else(|| {
                    warnings.push(format!("candidate {id} has no usable align; treated as abstain"));
                    Align::Abstain
                })
            };
            let evidence = bounded_text(
                obj.get("evidence").or_else(|| obj.get("reason")),
                SPECIALIST_EVIDENCE_MAX,
                id,
                warnings,
            );
            AgentVerdict {
                agent_role: role,
                candidate: id,
                score,
                align,
                evidence,
            }
        })
        .collect()
}

fn attacks(items: Vec<Value>, expected: &[EntityId], warnings: &mut Vec<String>) -> Vec<AttackVerdict> {
    let mut found = keyed_objects(items, expected, warnings);
    expected
        .iter()
        .map(|&id| {
            let Some(obj) = found.remove(&id) else {
                warnings.push(format!("candidate {id} missing; no penalty"));
                return AttackVerdict::none(id);
            };
            let penalty = match obj.get("penalty").and_then(as_number) {
                Some(p) => clamp_unit(p, "penalty", id, warnings),
                None => {
                    warnings.push(format!("candidate {id} has no usable penalty; using 0"));
                    0.0
                }
            };
            let issues = match obj.get("issues") {
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect(),
                Some(Value::String(s)) => vec![s.clone()],
                _ => Vec::new(),
            };
            AttackVerdict {
                candidate: id,
                issues,
                evidence: bounded_text(obj.get("evidence"), ATTACK_EVIDENCE_MAX, id, warnings),
                penalty,
            }
        })
        .collect()
}

fn judge(value: Value, expected: &[EntityId], warnings: &mut Vec<String>) -> Result<JudgeVerdict, ParseError> {
    let obj = match value {
        Value::Object(o) => o,
        Value::Array(mut a) if a.len() == 1 && a[0].is_object() => match a.remove(0) {
            Value::Object(o) => o,
            _ => unreachable!(),
        },
        other => {
            return Err(ParseError::Shape {
                role: Role::Judge,
                detail: format!("expected an object, found {}", kind_of(&other)),
            })
        }
    };
    let endorse = match obj.get("endorse") {
        None | Some(Value::Null) => None,
        Some(v) => match as_id(v) {
            Some(id) if expected.contains(&id) => Some(id),
            _ => {
                warnings.push(format!("endorsement {v} is not a current candidate"));
                None
            }
        },
    };
    let align = obj
        .get("align")
        .or_else(|| obj.get("verdict"))
        .and_then(|v| match as_align(Some(v)) {
            Some(Align::True) => Some(true),
            Some(Align::False) => Some(false),
            _ => None,
        });
    let adj_items = match obj.get("adjustments") {
        Some(Value::Array(a)) => a.clone(),
        None | Some(Value::Null) => Vec::new(),
        Some(other) => {
            warnings.push(format!("adjustments is {}, ignored", kind_of(other)));
            Vec::new()
        }
    };
    let mut adjustments = Vec::new();
    for item in adj_items {
        let Value::Object(o) = item else {
            warnings.push("dropped non-object adjustment".into());
            continue;
        };
        let Some(id) = o.get("candidate_id").and_then(as_id) else {
            warnings.push("dropped adjustment without candidate_id".into());
            continue;
        };
        if !expected.contains(&id) {
            warnings.push(format!("dropped adjustment for unexpected candidate {id}"));
            continue;
        }
        let Some(delta) = o.get("delta").and_then(as_number) else {
            warnings.push(format!("dropped adjustment for {id} without numeric delta"));
            continue;
        };
        adjustments.push(Adjustment {
            candidate: id,
            delta,
            note: bounded_text(o.get("note"), JUDGE_NOTE_MAX, id, warnings),
        });
    }
    Ok(JudgeVerdict {
        endorse,
        adjustments,
        align,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u64]) -> Vec<EntityId> {
        v.iter().copied().map(EntityId).collect()
    }

    fn score_list(p: Parsed) -> Vec<AgentVerdict> {
        match p.output {
            ParsedOutput::Scores(v) => v,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn proponent_format_with_abstain_fill() {
        let p = parse_verdicts(r#"[{"candidate_id":"1","align_score":0.8}]"#, &ids(&[1, 2]), Role::Proponent).unwrap();
        let v = score_list(p);
        assert_eq!(v[0].score, Some(0.8));
        assert_eq!(v[0].candidate, EntityId(1));
        assert_eq!(v[1].align, Align::Abstain);
        assert_eq!(v[1].score, None);
    }

    #[test]
    fn fences_are_stripped() {
        let plain = r#"[{"candidate_id": 1, "score": 0.4, "align": false, "evidence": "x"}]"#;
        let fenced = format!("Sure!\n```json\n{plain}\n```\nDone.");
        let a = parse_verdicts(plain, &ids(&[1]), Role::Type).unwrap();
        let b = parse_verdicts(&fenced, &ids(&[1]), Role::Type).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_score_clamped() {
        let p = parse_verdicts(r#"[{"candidate_id":"3","score":1.7,"align":true}]"#, &ids(&[3]), Role::Alias).unwrap();
        assert!(p.warnings.iter().any(|w| w.contains("clamped")));
        assert_eq!(score_list(p)[0].score, Some(1.0));
    }

    #[test]
    fn type_example_any_key_order() {
        let raw = r#"[
  {"candidate_id": 1, "evidence": "same type: organization", "score": 1.0, "align": true},
  {"candidate_id": 2, "evidence": "organization vs person", "score": 0.0, "align": false}
]"#;
        let v = score_list(parse_verdicts(raw, &ids(&[1, 2]), Role::Type).unwrap());
        assert_eq!(v[0].align, Align::True);
        assert_eq!(v[0].evidence.chars().count(), 20);
        assert_eq!(v[1].align, Align::False);
    }

    #[test]
    fn extra_and_duplicate_candidates_dropped() {
        let raw = r#"[{"candidate_id":9,"score":0.1,"align":true},{"candidate_id":1,"score":0.2,"align":"abstain"},{"candidate_id":1,"score":0.9,"align":true}]"#;
        let p = parse_verdicts(raw, &ids(&[1]), Role::Attribute).unwrap();
        assert_eq!(p.warnings.len(), 2);
        let v = score_list(p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].align, Align::Abstain);
        assert_eq!(v[0].score, Some(0.2));
    }

    #[test]
    fn truncated_output_repaired_once() {
        let raw = r#"[{"candidate_id":"1","align_score":0.8},{"candidate_id":"2","align_sc"#;
        let v = score_list(parse_verdicts(raw, &ids(&[1, 2]), Role::Referee).unwrap());
        assert_eq!(v[0].score, Some(0.8));
        assert_eq!(v[1].align, Align::Abstain);
        assert!(matches!(parse_verdicts("no json here", &ids(&[1]), Role::Referee), Err(ParseError::NoJson)));
        assert!(matches!(parse_verdicts(r#"{"a" 1}"#, &ids(&[1]), Role::Referee), Err(ParseError::Invalid(_))));
    }

    #[test]
    fn prose_with_brackets_before_payload() {
        let raw = "Candidates [see below]: [{\"candidate_id\":\"4\",\"align_score\":0.3}]";
        let v = score_list(parse_verdicts(raw, &ids(&[4]), Role::Opponent).unwrap());
        assert_eq!(v[0].score, Some(0.3));
    }

    #[test]
    fn attack_and_judge_shapes() {
        let raw = r#"[{"candidate_id":"5","issues":["dates differ"],"evidence":"dates","penalty":0.9}]"#;
        match parse_verdicts(raw, &ids(&[5, 6]), Role::Attack).unwrap().output {
            ParsedOutput::Attacks(a) => {
                assert_eq!(a[0].penalty, 0.9);
                assert_eq!(a[1], AttackVerdict::none(EntityId(6)));
            }
            other => panic!("{other:?}"),
        }
        let raw = r#"{"endorse": "6", "adjustments": [{"candidate_id": "5", "note": "risky", "delta": -0.1}, {"candidate_id": "7", "delta": 0.1}]}"#;
        match parse_verdicts(raw, &ids(&[5, 6]), Role::Judge).unwrap().output {
            ParsedOutput::Judge(j) => {
                assert_eq!(j.endorse, Some(EntityId(6)));
                assert_eq!(j.adjustments.len(), 1);
                assert_eq!(j.align, None);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_verdicts("[1,2]", &ids(&[5]), Role::Judge),
            Err(ParseError::Shape { .. })
        ));
    }

    #[test]
    fn empty_expected_is_an_error() {
        assert_eq!(parse_verdicts("[]", &[], Role::Alias), Err(ParseError::NoExpectedIds));
    }

    proptest::proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let _ = parse_verdicts(&s, &ids(&[1, 2]), Role::Judge);
            let _ = parse_verdicts(&s, &ids(&[1, 2]), Role::Attack);
            let _ = parse_verdicts(&s, &ids(&[1, 2]), Role::Alias);
        }

        #[test]
        fn repaired_prefixes_never_panic(cut in 0usize..120) {
            let full = r#"[{"candidate_id":"1","score":0.5,"align":true,"evidence":"a \"q\" b"},{"candidate_id":"2","score":0.25,"align":"abstain"}]"#;
            let cut = cut.min(full.len());
            if let Ok(p) = parse_verdicts(&full[..cut], &ids(&[1, 2]), Role::Neighborhood) {
                proptest::prop_assert_eq!(score_list(p).len(), 2);
            }
        }
    }
}
