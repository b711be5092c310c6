//! Seeded synthetic KG pairs with known alignment.
//!
//! Source ids are `0..n`, target ids `n..2n`, assigned through a shuffled
//! permutation. A configurable share of entities is placed in groups that
//! share one name on both sides, which makes their name embeddings nearly
//! indistinguishable; the structural part of the embedding carries a weak,
//! noisy signal that separates them only some of the time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{encode_binary, EmbeddingStore, EmbeddingVector, EntityEmbedding, FeatureDims};
use crate::kg::{AttributeTriple, EntityId, KgError, KnowledgeGraph, RelationTriple, SeedPairs, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub entities: usize,
    pub name_collision_rate: f64,
    /// Probability that a target attribute value differs from the source.
    pub attribute_noise: f64,
    /// Probability that a source edge is missing on the target side.
    pub edge_drop: f64,
    pub attributes_per_entity: usize,
    pub relations_per_entity: usize,
    /// Share of aligned pairs written as training seeds.
    pub seed_fraction: f64,
    pub name_dim: usize,
    pub rel_dim: usize,
    pub attr_dim: usize,
    /// Per-coordinate noise on name vectors.
    pub name_noise: f64,
    /// Norm of the structural signal relative to the unit name vector.
    pub structure_scale: f64,
    /// Per-coordinate noise on the structural part.
    pub structure_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            name_collision_rate: 0.3,
            attribute_noise: 0.1,
            edge_drop: 0.1,
            attributes_per_entity: 4,
            relations_per_entity: 3,
            seed_fraction: 0.3,
            name_dim: 16,
            rel_dim: 8,
            attr_dim: 8,
            name_noise: 0.005,
            structure_scale: 0.1,
            structure_noise: 0.06,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    pub source_emb: EmbeddingStore,
    pub target_emb: EmbeddingStore,
    /// Every aligned pair.
    pub truth: SeedPairs,
    /// Training subset of `truth`.
    pub seeds: SeedPairs,
    /// Source ids whose name is shared with another entity.
    pub collided: BTreeSet<EntityId>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "sa", "to", "vi", "zen", "bar", "del", "fu", "gor", "hal", "ix", "jun", "qua",
];
const RELATIONS: [&str; 6] = ["locatedIn", "memberOf", "partner", "foundedBy", "relatedTo", "successor"];
const ATTRIBUTES: [&str; 10] = [
    "birthYear", "population", "area", "genre", "country", "founded", "height", "language", "currency", "motto",
];

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let word = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(2..4);
        let mut w: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        w[..1].make_ascii_uppercase();
        w
    };
    format!("{} {}", word(rng), word(rng))
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid sigma");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn noisy(rng: &mut ChaCha8Rng, base: &[f64], scale: f64, sigma: f64) -> Result<EmbeddingVector, KgError> {
    let n = Normal::new(0.0, sigma.max(0.0)).expect("valid sigma");
    let v = base.iter().map(|x| (x * scale + n.sample(rng)) as f32).collect();
    EmbeddingVector::new(v).map_err(|e| KgError::Malformed {
        file: "<synthetic>".into(),
        line: 0,
        reason: e.to_string(),
    })
}

fn attribute_value(rng: &mut ChaCha8Rng, key: &str) -> String {
    match key {
        "birthYear" | "founded" => rng.random_range(1700..2020).to_string(),
        "population" | "area" | "height" => rng.random_range(10..1_000_000).to_string(),
        _ => random_name(rng).to_lowercase(),
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, KgError> {
    let n = cfg.entities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut perm: Vec<u64> = (0..n as u64).collect();
    perm.shuffle(&mut rng);
    let target_of = |i: usize| EntityId(n as u64 + perm[i]);

    // Distinct base names, then overwrite collision groups with a shared one.
    let mut used = BTreeSet::new();
    let mut names: Vec<String> = Vec::with_capacity(n);
    while names.len() < n {
        let name = random_name(&mut rng);
        if used.insert(name.clone()) {
            names.push(name);
        }
    }
    let n_coll = ((cfg.name_collision_rate * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..n_coll].to_vec();
    chosen.sort_unstable();
    chosen.shuffle(&mut rng);
    let mut collided = BTreeSet::new();
    for group in chosen.chunks(2) {
        if group.len() < 2 {
            // An odd member joins the previous group.
            let prev = collided.iter().next_back().copied().map(|e: EntityId| e.0 as usize);
            if let Some(p) = prev {
                names[group[0]] = names[p].clone();
                collided.insert(EntityId(group[0] as u64));
            }
            continue;
        }
        let shared = names[group[0]].clone();
        for &m in group {
            names[m] = shared.clone();
            collided.insert(EntityId(m as u64));
        }
    }

    let mut src_entities = BTreeMap::new();
    let mut tgt_entities = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        src_entities.insert(EntityId(i as u64), name.clone());
        tgt_entities.insert(target_of(i), name.clone());
    }

    let mut src_rel = Vec::new();
    let mut tgt_rel = Vec::new();
    for i in 0..n {
        for _ in 0..cfg.relations_per_entity {
            let j = rng.random_range(0..n);
            if j == i {
                continue;
            }
            let label = RELATIONS[rng.random_range(0..RELATIONS.len())].to_string();
            src_rel.push(RelationTriple {
                head: EntityId(i as u64),
                relation: label.clone(),
                tail: EntityId(j as u64),
            });
            if !rng.random_bool(cfg.edge_drop.clamp(0.0, 1.0)) {
                tgt_rel.push(RelationTriple {
                    head: target_of(i),
                    relation: label,
                    tail: target_of(j),
                });
            }
        }
    }

    let mut src_attr = Vec::new();
    let mut tgt_attr = Vec::new();
    for i in 0..n {
        let mut keys = ATTRIBUTES.to_vec();
        keys.shuffle(&mut rng);
        for key in keys.into_iter().take(cfg.attributes_per_entity) {
            let value = attribute_value(&mut rng, key);
            let tvalue = if rng.random_bool(cfg.attribute_noise.clamp(0.0, 1.0)) {
                attribute_value(&mut rng, key)
            } else {
                value.clone()
            };
            src_attr.push(AttributeTriple {
                entity: EntityId(i as u64),
                attribute: key.into(),
                value,
            });
            tgt_attr.push(AttributeTriple {
                entity: target_of(i),
                attribute: key.into(),
                value: tvalue,
            });
        }
    }

    let mut name_vecs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for name in &names {
        if !name_vecs.contains_key(name.as_str()) {
            let v = unit(&mut rng, cfg.name_dim);
            name_vecs.insert(name, v);
        }
    }
    let dims = FeatureDims {
        name: cfg.name_dim,
        rel: cfg.rel_dim,
        attr: cfg.attr_dim,
    };
    let mut src_emb = Vec::with_capacity(n);
    let mut tgt_emb = Vec::with_capacity(n);
    for (i, name) in names.iter().enumerate() {
        let nv = &name_vecs[name.as_str()];
        let rel = unit(&mut rng, cfg.rel_dim);
        let attr = unit(&mut rng, cfg.attr_dim);
        for (out, id) in [(&mut src_emb, EntityId(i as u64)), (&mut tgt_emb, target_of(i))] {
            out.push(EntityEmbedding::new(
                id,
                &noisy(&mut rng, nv, 1.0, cfg.name_noise)?,
                &noisy(&mut rng, &rel, cfg.structure_scale, cfg.structure_noise)?,
                &noisy(&mut rng, &attr, cfg.structure_scale, cfg.structure_noise)?,
            ));
        }
    }
    let to_kg = |e: crate::embedding::EmbeddingError| KgError::Malformed {
        file: "<synthetic>".into(),
        line: 0,
        reason: e.to_string(),
    };

    let truth = SeedPairs::new((0..n).map(|i| (EntityId(i as u64), target_of(i))).collect())?;
    let mut seed_idx: Vec<usize> = (0..n).collect();
    seed_idx.shuffle(&mut rng);
    let n_seeds = (cfg.seed_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
    let mut seed_idx = seed_idx[..n_seeds].to_vec();
    seed_idx.sort_unstable();
    let seeds = SeedPairs::new(seed_idx.into_iter().map(|i| (EntityId(i as u64), target_of(i))).collect())?;

    Ok(SynthDataset {
        source: KnowledgeGraph::from_parts(Side::Source, src_entities, src_rel, src_attr)?,
        target: KnowledgeGraph::from_parts(Side::Target, tgt_entities, tgt_rel, tgt_attr)?,
        source_emb: EmbeddingStore::new(Side::Source, dims, src_emb).map_err(to_kg)?,
        target_emb: EmbeddingStore::new(Side::Target, dims, tgt_emb).map_err(to_kg)?,
        truth,
        seeds,
        collided,
    })
}

impl SynthDataset {
    /// Aligned pairs that are not training seeds.
    pub fn test_pairs(&self) -> SeedPairs {
        let seeds: BTreeSet<_> = self.seeds.pairs().iter().copied().collect();
        let rest = self.truth.pairs().iter().copied().filter(|p| !seeds.contains(p)).collect();
        SeedPairs::new(rest).expect("subset of a valid pair list")
    }
}

fn entity_table(g: &KnowledgeGraph) -> String {
    g.entities().iter().map(|(id, n)| format!("{id}\t{n}\n")).collect()
}

fn relation_table(g: &KnowledgeGraph) -> String {
    g.relation_triples()
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
        .collect()
}

fn attribute_table(g: &KnowledgeGraph) -> String {
    g.attribute_triples()
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.entity, t.attribute, t.value))
        .collect()
}

fn pair_table(p: &SeedPairs) -> String {
    p.pairs().iter().map(|(s, t)| format!("{s}\t{t}\n")).collect()
}

/// Writes the dataset in the directory layout the pipeline loads.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let files = [
        ("ent_ids_1", entity_table(&ds.source)),
        ("ent_ids_2", entity_table(&ds.target)),
        ("triples_1", relation_table(&ds.source)),
        ("triples_2", relation_table(&ds.target)),
        ("attr_triples_1", attribute_table(&ds.source)),
        ("attr_triples_2", attribute_table(&ds.target)),
        ("ref_ent_ids", pair_table(&ds.test_pairs())),
        ("sup_ent_ids", pair_table(&ds.seeds)),
    ];
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    fs::write(dir.join("emb_1.bin"), encode_binary(&ds.source_emb))?;
    fs::write(dir.join("emb_2.bin"), encode_binary(&ds.target_emb))?;
    Ok(())
}
