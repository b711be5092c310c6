//! Knowledge-graph storage: TSV ingestion, adjacency/degree indexes and
//! entity profiles.
//!
//! Input files follow the DBP15K layout: one record per line, `\t`
//! separated, no header, blank lines ignored.
//!
//! | file            | columns                         |
//! |-----------------|---------------------------------|
//! | entities        | `id \t name`                    |
//! | relations       | `head_id \t relation \t tail_id`|
//! | attributes      | `entity_id \t key \t value`     |
//! | alignment pairs | `source_id \t target_id`        |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which of the two graphs an entity (or store) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Source,
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Source => f.write_str("source"),
            Side::Target => f.write_str("target"),
        }
    }
}

/// Numeric entity identifier, unique within one graph.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct EntityId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: EntityId,
    pub relation: String,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeTriple {
    pub entity: EntityId,
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}: triple references unknown entity id {id}")]
    DanglingId { file: String, id: EntityId },
    #[error("{file}:{line}: duplicate entity id {id}")]
    DuplicateEntity {
        file: String,
        line: usize,
        id: EntityId,
    },
    #[error("entity {id} not found in {side} graph")]
    NotFound { id: EntityId, side: Side },
    #[error("alignment pairs: source {0} listed more than once")]
    DuplicateSeed(EntityId),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One side of the alignment problem, immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    side: Side,
    entities: BTreeMap<EntityId, String>,
    relation_triples: Vec<RelationTriple>,
    attribute_triples: Vec<AttributeTriple>,
    adjacency: BTreeMap<EntityId, BTreeSet<(String, EntityId)>>,
    degree: BTreeMap<EntityId, usize>,
    attributes_by_entity: BTreeMap<EntityId, Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from in-memory parts, deduplicating triples and
    /// validating every referenced id.
    pub fn from_parts(
        side: Side,
        entities: BTreeMap<EntityId, String>,
        relation_triples: Vec<RelationTriple>,
        attribute_triples: Vec<AttributeTriple>,
    ) -> Result<Self, KgError> {
        Self::build(side, entities, relation_triples, attribute_triples, "<memory>", "<memory>")
    }

    fn build(
        side: Side,
        entities: BTreeMap<EntityId, String>,
        relation_triples: Vec<RelationTriple>,
        attribute_triples: Vec<AttributeTriple>,
        relation_file: &str,
        attribute_file: &str,
    ) -> Result<Self, KgError> {
        let mut seen = BTreeSet::new();
        let mut relations = Vec::with_capacity(relation_triples.len());
        for t in relation_triples {
            for id in [t.head, t.tail] {
                if !entities.contains_key(&id) {
                    return Err(KgError::DanglingId {
                        file: relation_file.to_string(),
                        id,
                    });
                }
            }
            if seen.insert(t.clone()) {
                relations.push(t);
            }
        }

        let mut seen = BTreeSet::new();
        let mut attributes = Vec::with_capacity(attribute_triples.len());
        for t in attribute_triples {
            if !entities.contains_key(&t.entity) {
                return Err(KgError::DanglingId {
                    file: attribute_file.to_string(),
                    id: t.entity,
                });
            }
            if seen.insert(t.clone()) {
                attributes.push(t);
            }
        }

        let mut adjacency: BTreeMap<EntityId, BTreeSet<(String, EntityId)>> = BTreeMap::new();
        let mut degree: BTreeMap<EntityId, usize> = BTreeMap::new();
        for t in &relations {
            adjacency
                .entry(t.head)
                .or_default()
                .insert((t.relation.clone(), t.tail));
            adjacency
                .entry(t.tail)
                .or_default()
                .insert((t.relation.clone(), t.head));
            *degree.entry(t.head).or_default() += 1;
            if t.tail != t.head {
                *degree.entry(t.tail).or_default() += 1;
            }
        }

        let mut attributes_by_entity: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        for (i, t) in attributes.iter().enumerate() {
            attributes_by_entity.entry(t.entity).or_default().push(i);
        }

        Ok(Self {
            side,
            entities,
            relation_triples: relations,
            attribute_triples: attributes,
            adjacency,
            degree,
            attributes_by_entity,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, String> {
        &self.entities
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.entities.contains_key(&e)
    }

    pub fn relation_triples(&self) -> &[RelationTriple] {
        &self.relation_triples
    }

    pub fn attribute_triples(&self) -> &[AttributeTriple] {
        &self.attribute_triples
    }

    pub fn name(&self, e: EntityId) -> Result<&str, KgError> {
        self.entities
            .get(&e)
            .map(String::as_str)
            .ok_or(KgError::NotFound {
                id: e,
                side: self.side,
            })
    }

    /// `(relation, neighbor)` pairs incident to `e`, in either direction.
    pub fn neighbors(&self, e: EntityId) -> Result<&BTreeSet<(String, EntityId)>, KgError> {
        static EMPTY: BTreeSet<(String, EntityId)> = BTreeSet::new();
        self.check(e)?;
        Ok(self.adjacency.get(&e).unwrap_or(&EMPTY))
    }

    /// Distinct neighboring entities of `e`, ascending.
    pub fn neighbor_entities(&self, e: EntityId) -> Result<BTreeSet<EntityId>, KgError> {
        Ok(self.neighbors(e)?.iter().map(|(_, n)| *n).collect())
    }

    /// Number of relation triples with `e` as head or tail. Self-loops count once.
    pub fn degree(&self, e: EntityId) -> Result<usize, KgError> {
        self.check(e)?;
        Ok(self.degree.get(&e).copied().unwrap_or(0))
    }

    pub fn attributes_of(&self, e: EntityId) -> Result<Vec<&AttributeTriple>, KgError> {
        self.check(e)?;
        Ok(self
            .attributes_by_entity
            .get(&e)
            .map(|idx| idx.iter().map(|&i| &self.attribute_triples[i]).collect())
            .unwrap_or_default())
    }

    pub fn entity_profile(&self, e: EntityId) -> Result<Profile, KgError> {
        let name = self.name(e)?.to_string();
        let mut attributes: Vec<(String, String)> = self
            .attributes_of(e)?
            .into_iter()
            .map(|t| (t.attribute.clone(), t.value.clone()))
            .collect();
        attributes.sort();
        let mut relations: Vec<(String, String)> = self
            .neighbors(e)?
            .iter()
            .map(|(r, n)| (r.clone(), self.entities[n].clone()))
            .collect();
        relations.sort();
        relations.dedup();
        Ok(Profile {
            entity: e,
            name,
            attributes,
            relations,
        })
    }

    fn check(&self, e: EntityId) -> Result<(), KgError> {
        if self.entities.contains_key(&e) {
            Ok(())
        } else {
            Err(KgError::NotFound {
                id: e,
                side: self.side,
            })
        }
    }
}

/// Textual view of one entity: name, sorted attributes, sorted
/// `(relation, neighbor name)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub entity: EntityId,
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub relations: Vec<(String, String)>,
}

impl Profile {
    pub fn attribute_line(&self) -> String {
        join_pairs(&self.attributes, ": ")
    }

    pub fn relation_line(&self) -> String {
        join_pairs(&self.relations, "|")
    }

    /// Three-line rendering used in prompts and corpus records.
    pub fn render(&self) -> String {
        format!(
            "Name: {}\nAttributes: {}\nRelations: {}",
            self.name,
            self.attribute_line(),
            self.relation_line()
        )
    }
}

fn join_pairs(pairs: &[(String, String)], sep: &str) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}{sep}{v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Known-aligned `(source, target)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPairs {
    pairs: Vec<(EntityId, EntityId)>,
}

impl SeedPairs {
    pub fn new(pairs: Vec<(EntityId, EntityId)>) -> Result<Self, KgError> {
        let mut seen = BTreeSet::new();
        for (s, _) in &pairs {
            if !seen.insert(*s) {
                return Err(KgError::DuplicateSeed(*s));
            }
        }
        Ok(Self { pairs })
    }

    /// Checks both ends of every pair against their graphs.
    pub fn validate(&self, source: &KnowledgeGraph, target: &KnowledgeGraph) -> Result<(), KgError> {
        for (s, t) in &self.pairs {
            source.check(*s)?;
            target.check(*t)?;
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target_of(&self, source: EntityId) -> Option<EntityId> {
        self.pairs.iter().find(|(s, _)| *s == source).map(|(_, t)| *t)
    }

    pub fn as_map(&self) -> BTreeMap<EntityId, EntityId> {
        self.pairs.iter().copied().collect()
    }
}

fn rows<'a>(text: &'a str) -> impl Iterator<Item = (usize, &'a str)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_id(field: &str, file: &str, line: usize) -> Result<EntityId, KgError> {
    field
        .trim()
        .parse::<u64>()
        .map(EntityId)
        .map_err(|_| KgError::Malformed {
            file: file.to_string(),
            line,
            reason: format!("invalid entity id {field:?}"),
        })
}

fn malformed(file: &str, line: usize, reason: impl Into<String>) -> KgError {
    KgError::Malformed {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Parses an `id \t name` table.
pub fn parse_entities(text: &str, file: &str) -> Result<BTreeMap<EntityId, String>, KgError> {
    let mut out = BTreeMap::new();
    for (line, row) in rows(text) {
        let (id, name) = row
            .split_once('\t')
            .ok_or_else(|| malformed(file, line, "expected `id<TAB>name`"))?;
        let id = parse_id(id, file, line)?;
        if out.insert(id, name.to_string()).is_some() {
            return Err(KgError::DuplicateEntity {
                file: file.to_string(),
                line,
                id,
            });
        }
    }
    Ok(out)
}

/// Parses a `head \t relation \t tail` table. Ids are not resolved here.
pub fn parse_relations(text: &str, file: &str) -> Result<Vec<RelationTriple>, KgError> {
    let mut out = Vec::new();
    for (line, row) in rows(text) {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(
                file,
                line,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        if fields[1].is_empty() {
            return Err(malformed(file, line, "empty relation label"));
        }
        out.push(RelationTriple {
            head: parse_id(fields[0], file, line)?,
            relation: fields[1].to_string(),
            tail: parse_id(fields[2], file, line)?,
        });
    }
    Ok(out)
}

/// Parses an `entity \t key \t value` table. The value may itself contain tabs.
pub fn parse_attributes(text: &str, file: &str) -> Result<Vec<AttributeTriple>, KgError> {
    let mut out = Vec::new();
    for (line, row) in rows(text) {
        let mut fields = row.splitn(3, '\t');
        let (Some(id), Some(key), Some(value)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(malformed(file, line, "expected `id<TAB>key<TAB>value`"));
        };
        if key.is_empty() {
            return Err(malformed(file, line, "empty attribute key"));
        }
        out.push(AttributeTriple {
            entity: parse_id(id, file, line)?,
            attribute: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Parses a `source \t target` table.
pub fn parse_pairs(text: &str, file: &str) -> Result<Vec<(EntityId, EntityId)>, KgError> {
    let mut out = Vec::new();
    for (line, row) in rows(text) {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                file,
                line,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        out.push((parse_id(fields[0], file, line)?, parse_id(fields[1], file, line)?));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, KgError> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Paths making up one side of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFiles {
    pub entities: PathBuf,
    pub relations: PathBuf,
    pub attributes: Option<PathBuf>,
}

pub fn load_graph(files: &GraphFiles, side: Side) -> Result<KnowledgeGraph, KgError> {
    let ent_name = files.entities.display().to_string();
    let rel_name = files.relations.display().to_string();
    let entities = parse_entities(&read(&files.entities)?, &ent_name)?;
    let relations = parse_relations(&read(&files.relations)?, &rel_name)?;
    let (attributes, attr_name) = match &files.attributes {
        Some(p) => {
            let name = p.display().to_string();
            (parse_attributes(&read(p)?, &name)?, name)
        }
        None => (Vec::new(), String::from("<none>")),
    };
    KnowledgeGraph::build(side, entities, relations, attributes, &rel_name, &attr_name)
}

pub fn load_pairs(path: &Path) -> Result<SeedPairs, KgError> {
    let name = path.display().to_string();
    SeedPairs::new(parse_pairs(&read(path)?, &name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ents(n: u64) -> BTreeMap<EntityId, String> {
        (0..n).map(|i| (EntityId(i), format!("e{i}"))).collect()
    }

    fn rel(h: u64, r: &str, t: u64) -> RelationTriple {
        RelationTriple {
            head: EntityId(h),
            relation: r.to_string(),
            tail: EntityId(t),
        }
    }

    #[test]
    fn three_entities_two_triples() {
        let g = KnowledgeGraph::from_parts(
            Side::Source,
            ents(3),
            vec![rel(0, "r", 1), rel(1, "r", 2)],
            vec![],
        )
        .unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.relation_triples().len(), 2);
    }

    #[test]
    fn dangling_id_is_named() {
        let err = KnowledgeGraph::from_parts(Side::Source, ents(3), vec![rel(0, "r", 99)], vec![])
            .unwrap_err();
        assert!(matches!(err, KgError::DanglingId { id: EntityId(99), .. }));
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_relations("0\tr\t1\n\n1\tr\n", "triples_1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("triples_1:3:"), "{msg}");
    }

    #[test]
    fn neighbors_both_directions() {
        let g = KnowledgeGraph::from_parts(
            Side::Source,
            ents(4),
            vec![rel(0, "r1", 1), rel(2, "r2", 0)],
            vec![],
        )
        .unwrap();
        let n: Vec<_> = g.neighbors(EntityId(0)).unwrap().iter().cloned().collect();
        assert_eq!(
            n,
            vec![("r1".to_string(), EntityId(1)), ("r2".to_string(), EntityId(2))]
        );
        assert!(g.neighbors(EntityId(3)).unwrap().is_empty());
        assert_eq!(g.degree(EntityId(3)).unwrap(), 0);
        assert!(matches!(g.neighbors(EntityId(7)), Err(KgError::NotFound { .. })));
        assert!(matches!(g.degree(EntityId(7)), Err(KgError::NotFound { .. })));
    }

    #[test]
    fn degree_counts_incidences_and_self_loop_once() {
        let g = KnowledgeGraph::from_parts(
            Side::Source,
            ents(6),
            vec![
                rel(0, "a", 1),
                rel(0, "a", 2),
                rel(0, "b", 3),
                rel(4, "c", 0),
                rel(5, "c", 0),
                rel(1, "loop", 1),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(g.degree(EntityId(0)).unwrap(), 5);
        assert_eq!(g.degree(EntityId(1)).unwrap(), 2);
        assert!(g
            .neighbors(EntityId(1))
            .unwrap()
            .contains(&("loop".to_string(), EntityId(1))));
    }

    #[test]
    fn star_center_has_five_neighbors() {
        let triples: Vec<_> = (1..=5).map(|i| rel(0, "spoke", i)).collect();
        let g = KnowledgeGraph::from_parts(Side::Source, ents(6), triples.clone(), vec![]).unwrap();
        let brute: BTreeSet<_> = triples
            .iter()
            .filter(|t| t.head == EntityId(0) || t.tail == EntityId(0))
            .map(|t| if t.head == EntityId(0) { t.tail } else { t.head })
            .collect();
        assert_eq!(g.neighbors(EntityId(0)).unwrap().len(), 5);
        assert_eq!(g.neighbor_entities(EntityId(0)).unwrap(), brute);
    }

    #[test]
    fn duplicate_triples_are_dropped() {
        let g = KnowledgeGraph::from_parts(
            Side::Target,
            ents(2),
            vec![rel(0, "r", 1), rel(0, "r", 1)],
            vec![],
        )
        .unwrap();
        assert_eq!(g.relation_triples().len(), 1);
        assert_eq!(g.degree(EntityId(0)).unwrap(), 1);
    }

    #[test]
    fn profile_sorting_and_empty_attributes() {
        let g = KnowledgeGraph::from_parts(
            Side::Source,
            ents(4),
            vec![rel(0, "z", 1), rel(0, "a", 3), rel(2, "m", 0)],
            vec![
                AttributeTriple {
                    entity: EntityId(1),
                    attribute: "b".into(),
                    value: "2".into(),
                },
                AttributeTriple {
                    entity: EntityId(1),
                    attribute: "a".into(),
                    value: "1".into(),
                },
            ],
        )
        .unwrap();
        let p0 = g.entity_profile(EntityId(0)).unwrap();
        assert!(p0.attributes.is_empty());
        assert_eq!(p0.name, "e0");
        assert_eq!(p0.relations.len(), 3);
        assert_eq!(p0.render(), g.entity_profile(EntityId(0)).unwrap().render());
        let p1 = g.entity_profile(EntityId(1)).unwrap();
        assert_eq!(
            p1.attributes,
            vec![("a".into(), "1".into()), ("b".into(), "2".into())]
        );
    }

    #[test]
    fn attribute_values_may_contain_tabs() {
        let a = parse_attributes("1\tnote\tx\ty\n", "attrs").unwrap();
        assert_eq!(a[0].value, "x\ty");
    }

    #[test]
    fn seed_sources_must_be_unique() {
        let err = SeedPairs::new(vec![(EntityId(1), EntityId(2)), (EntityId(1), EntityId(3))]);
        assert!(matches!(err, Err(KgError::DuplicateSeed(EntityId(1)))));
    }
}
