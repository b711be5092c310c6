//! Preference corpus: seed positives plus name-similar and high-degree
//! neighbour negatives, rendered as yes/no instruction records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::sha256_hex;
use crate::embedding::{cosine, EmbeddingError, EmbeddingStore};
use crate::kg::{EntityId, KgError, KnowledgeGraph, Profile, SeedPairs};

pub const INSTRUCTION: &str =
    "Determine whether entity A and entity B are the same entity in the real world. Answer Yes or No.";
pub const TEMPLATE_VERSION: u32 = 1;
const INPUT_TEMPLATE: &str = "Entity A Name: {a_name}\nEntity A Attributes: {a_attrs}\nEntity A Relations: {a_rels}\n\
Entity B Name: {b_name}\nEntity B Attributes: {b_attrs}\nEntity B Relations: {b_rels}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("name-negative pool has {0} targets; at least 2 are needed")]
    PoolTooSmall(usize),
    #[error("source {0} has no seed counterpart")]
    NoSeed(EntityId),
    #[error("no name embedding for {0}")]
    MissingEmbedding(EntityId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("pair ({source}, {counterpart}): {err}")]
    Unresolvable {
        source: EntityId,
        counterpart: EntityId,
        #[source]
        err: KgError,
    },
    #[error("negative pair ({0}, {1}) duplicates a seed pair")]
    NegativeIsSeed(EntityId, EntityId),
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Positive,
    NameNegative,
    DegreeNegative,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Positive => "positive",
            PairKind::NameNegative => "name_negative",
            PairKind::DegreeNegative => "degree_negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub source: EntityId,
    pub counterpart: EntityId,
    pub kind: PairKind,
    /// Name cosine for name negatives.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub positive: usize,
    pub name_negative: usize,
    pub degree_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub counts: KindCounts,
    pub sources: Vec<String>,
    pub template_version: u32,
    pub template_hash: String,
    /// Name-similarity floor; `None` keeps every name negative.
    pub floor: Option<f64>,
}

/// Passive LoRA/DPO settings for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lora_r: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub target_modules: Vec<String>,
    pub learning_rate: f64,
    pub epochs: u32,
    pub precision: String,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lora_r: 22,
            lora_alpha: 44,
            lora_dropout: 0.1,
            target_modules: vec!["q_proj".into(), "v_proj".into()],
            learning_rate: 1e-4,
            epochs: 1,
            precision: "bf16".into(),
        }
    }
}

pub fn template_hash() -> String {
    sha256_hex(format!("{INSTRUCTION}\n{INPUT_TEMPLATE}").as_bytes())
}

/// For each source, the target with the most similar name vector other than
/// its seed counterpart. Ties go to the lower id. Pairs under `floor` are
/// dropped.
pub fn name_negatives(
    sources: &[EntityId],
    source_names: &EmbeddingStore,
    target_names: &EmbeddingStore,
    seeds: &SeedPairs,
    floor: Option<f64>,
) -> Result<Vec<PreferencePair>, CorpusError> {
    if target_names.len() < 2 {
        return Err(CorpusError::PoolTooSmall(target_names.len()));
    }
    let mut out = Vec::new();
    for &s in sources {
        let gt = seeds.target_of(s).ok_or(CorpusError::NoSeed(s))?;
        let src = source_names.get(s).ok_or(CorpusError::MissingEmbedding(s))?;
        let mut best: Option<(EntityId, f64)> = None;
        // Entries are sorted by id, so strict `>` keeps the lowest id on ties.
        for t in target_names.entries() {
            if t.entity == gt {
                continue;
            }
            let c = cosine(src.name(), t.name())?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((t.entity, c));
            }
        }
        let (neg, score) = best.expect("pool has a non-seed target");
        if floor.is_some_and(|f| score < f) {
            continue;
        }
        out.push(PreferencePair {
            source: s,
            counterpart: neg,
            kind: PairKind::NameNegative,
            score: Some(score),
        });
    }
    Ok(out)
}

/// For each source, its highest-degree neighbour in the same graph (ties to
/// the lower id). Sources without neighbours are skipped.
pub fn degree_negatives(g: &KnowledgeGraph, sources: &[EntityId]) -> Result<Vec<PreferencePair>, KgError> {
    let mut out = Vec::new();
    for &s in sources {
        let mut best: Option<(EntityId, usize)> = None;
        for n in g.neighbor_entities(s)? {
            if n == s {
                continue;
            }
            let d = g.degree(n)?;
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((n, d));
            }
        }
        match best {
            Some((n, _)) => out.push(PreferencePair {
                source: s,
                counterpart: n,
                kind: PairKind::DegreeNegative,
                score: None,
            }),
            None => tracing::warn!(source = s.0, "no neighbours; degree negative skipped"),
        }
    }
    Ok(out)
}

fn render_input(a: &Profile, b: &Profile) -> String {
    INPUT_TEMPLATE
        .replace("{a_name}", &a.name)
        .replace("{a_attrs}", &a.attribute_line())
        .replace("{a_rels}", &a.relation_line())
        .replace("{b_name}", &b.name)
        .replace("{b_attrs}", &b.attribute_line())
        .replace("{b_rels}", &b.relation_line())
}

/// One record per pair, ordered by kind, source, counterpart.
pub fn build_corpus(
    seeds: &SeedPairs,
    name_negs: &[PreferencePair],
    degree_negs: &[PreferencePair],
    g_s: &KnowledgeGraph,
    g_t: &KnowledgeGraph,
    sources: Vec<String>,
    floor: Option<f64>,
) -> Result<(Vec<InstructionRecord>, CorpusManifest), CorpusError> {
    let seed_set: BTreeSet<(EntityId, EntityId)> = seeds.pairs().iter().copied().collect();
    let mut pairs: Vec<PreferencePair> = seeds
        .pairs()
        .iter()
        .map(|&(s, t)| PreferencePair {
            source: s,
            counterpart: t,
            kind: PairKind::Positive,
            score: None,
        })
        .collect();
    for p in name_negs.iter().chain(degree_negs) {
        if seed_set.contains(&(p.source, p.counterpart)) {
            return Err(CorpusError::NegativeIsSeed(p.source, p.counterpart));
        }
        pairs.push(p.clone());
    }
    pairs.sort_by_key(|p| (p.kind, p.source, p.counterpart));

    let mut counts: BTreeMap<PairKind, usize> = BTreeMap::new();
    let records = pairs
        .iter()
        .map(|p| {
            let err = |err| CorpusError::Unresolvable {
                source: p.source,
                counterpart: p.counterpart,
                err,
            };
            let a = g_s.entity_profile(p.source).map_err(err)?;
            let b = match p.kind {
                PairKind::DegreeNegative => g_s.entity_profile(p.counterpart),
                _ => g_t.entity_profile(p.counterpart),
            }
            .map_err(err)?;
            *counts.entry(p.kind).or_default() += 1;
            let (chosen, rejected) = match p.kind {
                PairKind::Positive => ("Yes", "No"),
                _ => ("No", "Yes"),
            };
            Ok(InstructionRecord {
                instruction: INSTRUCTION.to_string(),
                input: render_input(&a, &b),
                chosen: chosen.into(),
                rejected: rejected.into(),
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let count = |k| counts.get(&k).copied().unwrap_or(0);
    let manifest = CorpusManifest {
        counts: KindCounts {
            positive: count(PairKind::Positive),
            name_negative: count(PairKind::NameNegative),
            degree_negative: count(PairKind::DegreeNegative),
        },
        sources,
        template_version: TEMPLATE_VERSION,
        template_hash: template_hash(),
        floor,
    };
    Ok((records, manifest))
}

pub fn serialize_corpus(records: &[InstructionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("string fields") + "\n")
        .collect()
}

pub fn parse_corpus(text: &str) -> Result<Vec<InstructionRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |reason: String| CorpusError::Parse { line: i + 1, reason };
            let r: InstructionRecord = serde_json::from_str(l).map_err(|e| err(e.to_string()))?;
            let valid = matches!((r.chosen.as_str(), r.rejected.as_str()), ("Yes", "No") | ("No", "Yes"));
            if !valid {
                return Err(err(format!("chosen/rejected must be Yes/No opposites, got {:?}/{:?}", r.chosen, r.rejected)));
            }
            Ok(r)
        })
        .collect()
}

/// `kind \t source \t counterpart \t score` per pair (score empty when absent).
pub fn serialize_pairs(pairs: &[PreferencePair]) -> String {
    pairs
        .iter()
        .map(|p| {
            let score = p.score.map(|s| s.to_string()).unwrap_or_default();
            format!("{}\t{}\t{}\t{}\n", p.kind.as_str(), p.source, p.counterpart, score)
        })
        .collect()
}
