//! Frequency-ranked profile compression for the verification stage.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DebateConfig;
use crate::kg::{KnowledgeGraph, Profile};
use crate::tokens::estimate_tokens;

/// Corpus-wide counts of attribute keys and relation labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub attributes: BTreeMap<String, u64>,
    pub relations: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn from_graphs(graphs: &[&KnowledgeGraph]) -> Self {
        let mut t = Self::default();
        for g in graphs {
            for a in g.attribute_triples() {
                *t.attributes.entry(a.attribute.clone()).or_default() += 1;
            }
            for r in g.relation_triples() {
                *t.relations.entry(r.relation.clone()).or_default() += 1;
            }
        }
        t
    }

    pub fn attribute(&self, key: &str) -> u64 {
        self.attributes.get(key).copied().unwrap_or(0)
    }

    pub fn relation(&self, label: &str) -> u64 {
        self.relations.get(label).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedProfile {
    pub profile: Profile,
    pub original_tokens: u64,
    pub token_estimate: u64,
    pub budget: u64,
}

impl CompressedProfile {
    pub fn ratio(&self) -> f64 {
        if self.original_tokens == 0 {
            1.0
        } else {
            self.token_estimate as f64 / self.original_tokens as f64
        }
    }
}

pub fn profile_tokens(p: &Profile) -> u64 {
    estimate_tokens(&p.render())
}

/// `max(floor, floor(ratio * original))`.
pub fn token_budget(original: u64, cfg: &DebateConfig) -> u64 {
    let scaled = (cfg.compression_budget * original as f64).floor() as u64;
    scaled.max(cfg.compression_floor_tokens)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Attribute,
    Relation,
}

/// Keeps attributes and relations in descending corpus frequency until the
/// next one would overflow the budget. The name is always kept.
pub fn compress_profile(profile: &Profile, freq: &FrequencyTable, cfg: &DebateConfig) -> CompressedProfile {
    let original = profile_tokens(profile);
    let budget = token_budget(original, cfg);
    if original <= budget {
        return CompressedProfile {
            profile: profile.clone(),
            original_tokens: original,
            token_estimate: original,
            budget,
        };
    }
    let mut items: Vec<(Reverse<u64>, Kind, &String, &String)> = profile
        .attributes
        .iter()
        .map(|(k, v)| (Reverse(freq.attribute(k)), Kind::Attribute, k, v))
        .chain(
            profile
                .relations
                .iter()
                .map(|(r, n)| (Reverse(freq.relation(r)), Kind::Relation, r, n)),
        )
        .collect();
    items.sort();

    let mut out = Profile {
        entity: profile.entity,
        name: profile.name.clone(),
        attributes: Vec::new(),
        relations: Vec::new(),
    };
    let mut current = profile_tokens(&out);
    for (_, kind, a, b) in items {
        let pair = (a.clone(), b.clone());
        let list = match kind {
            Kind::Attribute => &mut out.attributes,
            Kind::Relation => &mut out.relations,
        };
        list.push(pair);
        let next = profile_tokens(&out);
        if next > budget {
            match kind {
                Kind::Attribute => out.attributes.pop(),
                Kind::Relation => out.relations.pop(),
            };
            break;
        }
        current = next;
    }
    // Rendering order stays sorted, like uncompressed profiles.
    out.attributes.sort();
    out.relations.sort();
    CompressedProfile {
        profile: out,
        original_tokens: original,
        token_estimate: current,
        budget,
    }
}
