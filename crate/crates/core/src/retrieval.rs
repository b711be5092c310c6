//! Candidate sets, the uncertain-entity partition and direct alignments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{top_k, ScoreMatrix};
use crate::kg::EntityId;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("target side is empty")]
    EmptyTargets,
    #[error("K = {k} exceeds the {targets} available targets")]
    KTooLarge { k: usize, targets: usize },
    #[error("K must be positive")]
    ZeroK,
    #[error("source {0} has no row in the score matrix")]
    UnknownSource(EntityId),
    #[error("candidate set for {0} has fewer than two entries; gap undefined")]
    GapUndefined(EntityId),
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("candidate dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    Embedding,
    LdvRerank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: EntityId,
    /// Ranking score: embedding similarity, or the referee score after a rerank.
    pub score: f64,
    /// Embedding similarity, kept across reranks.
    pub prior: f64,
}

/// Ranked targets for one source entity, scores non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source: EntityId,
    candidates: Vec<Candidate>,
    pub created_from: CandidateOrigin,
}

impl CandidateSet {
    /// Sorts by score (descending), then prior (descending), then target id.
    pub fn new(source: EntityId, mut candidates: Vec<Candidate>, created_from: CandidateOrigin) -> Self {
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.prior.total_cmp(&a.prior))
                .then(a.target.cmp(&b.target))
        });
        let mut seen = BTreeSet::new();
        candidates.retain(|c| seen.insert(c.target));
        Self {
            source,
            candidates,
            created_from,
        }
    }

    /// Keeps the given order verbatim. Caller guarantees non-increasing scores.
    pub(crate) fn from_ordered(source: EntityId, candidates: Vec<Candidate>, created_from: CandidateOrigin) -> Self {
        debug_assert!(candidates.windows(2).all(|w| w[0].score >= w[1].score));
        Self {
            source,
            candidates,
            created_from,
        }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn s1(&self) -> Option<f64> {
        self.candidates.first().map(|c| c.score)
    }

    pub fn s2(&self) -> Option<f64> {
        self.candidates.get(1).map(|c| c.score)
    }

    pub fn targets(&self) -> Vec<EntityId> {
        self.candidates.iter().map(|c| c.target).collect()
    }

    pub fn position(&self, target: EntityId) -> Option<usize> {
        self.candidates.iter().position(|c| c.target == target)
    }

    pub fn prefix(&self, k: usize) -> &[Candidate] {
        &self.candidates[..k.min(self.candidates.len())]
    }
}

/// `s1 - s2` of a candidate set.
pub fn gap(cs: &CandidateSet) -> Result<f64, RetrievalError> {
    match (cs.s1(), cs.s2()) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(RetrievalError::GapUndefined(cs.source)),
    }
}

pub fn build_candidates(
    sources: &[EntityId],
    scores: &ScoreMatrix,
    k: usize,
) -> Result<BTreeMap<EntityId, CandidateSet>, RetrievalError> {
    if scores.n_cols() == 0 {
        return Err(RetrievalError::EmptyTargets);
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if k > scores.n_cols() {
        return Err(RetrievalError::KTooLarge {
            k,
            targets: scores.n_cols(),
        });
    }
    let row_index: BTreeMap<EntityId, usize> =
        scores.rows.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    // Column ids ascend in stores built by this crate, so index order is id order.
    let mut cols: Vec<(usize, EntityId)> = scores.cols.iter().copied().enumerate().collect();
    cols.sort_by_key(|(_, id)| *id);
    let col_rank: Vec<usize> = {
        let mut r = vec![0; cols.len()];
        for (rank, (idx, _)) in cols.iter().enumerate() {
            r[*idx] = rank;
        }
        r
    };

    let mut out = BTreeMap::new();
    for &s in sources {
        let &i = row_index.get(&s).ok_or(RetrievalError::UnknownSource(s))?;
        let row = scores.row(i);
        let ranked = if col_rank.iter().enumerate().all(|(a, b)| a == *b) {
            top_k(row, k).expect("k checked above")
        } else {
            // Re-index by ascending target id so ties still break on id.
            let permuted: Vec<f64> = cols.iter().map(|(idx, _)| row[*idx]).collect();
            top_k(&permuted, k)
                .expect("k checked above")
                .into_iter()
                .map(|(r, v)| (cols[r].0, v))
                .collect()
        };
        let candidates = ranked
            .into_iter()
            .map(|(j, v)| Candidate {
                target: scores.cols[j],
                score: v,
                prior: v,
            })
            .collect();
        out.insert(s, CandidateSet::from_ordered(s, candidates, CandidateOrigin::Embedding));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainSet {
    pub members: BTreeSet<EntityId>,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Ldv,
    Dda { round: u32 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Direct => f.write_str("direct"),
            Provenance::Ldv => f.write_str("ldv"),
            Provenance::Dda { round } => write!(f, "dda-{round}"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Provenance::Direct),
            "ldv" => Ok(Provenance::Ldv),
            _ => s
                .strip_prefix("dda-")
                .and_then(|r| r.parse().ok())
                .map(|round| Provenance::Dda { round })
                .ok_or_else(|| format!("unknown provenance {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDecision {
    pub source: EntityId,
    pub target: EntityId,
    pub score: f64,
    pub provenance: Provenance,
}

/// Splits sources into the uncertain set (`s1 - s2 < delta1`) and direct
/// Top-1 decisions for everyone else.
pub fn build_uncertain(
    candidates: &BTreeMap<EntityId, CandidateSet>,
    delta1: f64,
) -> Result<(UncertainSet, Vec<AlignmentDecision>), RetrievalError> {
    if delta1.is_nan() || delta1 < 0.0 {
        return Err(RetrievalError::NegativeThreshold(delta1));
    }
    let mut members = BTreeSet::new();
    let mut direct = Vec::new();
    for (src, cs) in candidates {
        if gap(cs)? < delta1 {
            members.insert(*src);
        } else {
            let top = cs.top().expect("gap implies two entries");
            direct.push(AlignmentDecision {
                source: *src,
                target: top.target,
                score: top.score,
                provenance: Provenance::Direct,
            });
        }
    }
    Ok((
        UncertainSet {
            members,
            threshold_used: delta1,
        },
        direct,
    ))
}

#[derive(Serialize, Deserialize)]
struct DumpLine {
    source: EntityId,
    candidates: Vec<(EntityId, f64)>,
    gap: Option<f64>,
}

/// One JSON object per source: `{"source", "candidates": [[id, score], ..], "gap"}`.
pub fn encode_candidate_dump(map: &BTreeMap<EntityId, CandidateSet>) -> String {
    let mut out = String::new();
    for cs in map.values() {
        let line = DumpLine {
            source: cs.source,
            candidates: cs.candidates.iter().map(|c| (c.target, c.score)).collect(),
            gap: gap(cs).ok(),
        };
        out.push_str(&serde_json::to_string(&line).expect("finite scores"));
        out.push('\n');
    }
    out
}

pub fn decode_candidate_dump(text: &str) -> Result<BTreeMap<EntityId, CandidateSet>, RetrievalError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| RetrievalError::Dump { line: i + 1, reason };
        let line: DumpLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if line.candidates.is_empty() {
            return Err(err("empty candidate list".into()));
        }
        if line.candidates.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(err("scores are not descending".into()));
        }
        let mut seen = BTreeSet::new();
        if !line.candidates.iter().all(|(t, _)| seen.insert(*t)) {
            return Err(err("duplicate target".into()));
        }
        let cands = line
            .candidates
            .into_iter()
            .map(|(target, score)| Candidate {
                target,
                score,
                prior: score,
            })
            .collect();
        let cs = CandidateSet::from_ordered(line.source, cands, CandidateOrigin::Embedding);
        if out.insert(line.source, cs).is_some() {
            return Err(err(format!("duplicate source {}", line.source)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        let n = rows.len() as u64;
        let m = rows[0].len() as u64;
        ScoreMatrix::from_rows(
            (0..n).map(EntityId).collect(),
            (100..100 + m).map(EntityId).collect(),
            rows,
        )
    }

    fn set(scores: &[f64]) -> CandidateSet {
        CandidateSet::new(
            EntityId(0),
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Candidate {
                    target: EntityId(i as u64 + 1),
                    score: s,
                    prior: s,
                })
                .collect(),
            CandidateOrigin::Embedding,
        )
    }

    #[test]
    fn candidates_sorted_and_truncated() {
        let m = matrix(vec![vec![0.2, 0.9, 0.4]]);
        let c = build_candidates(&[EntityId(0)], &m, 2).unwrap();
        let got: Vec<_> = c[&EntityId(0)].candidates().iter().map(|c| (c.target.0, c.score)).collect();
        assert_eq!(got, vec![(101, 0.9), (102, 0.4)]);
        let full = build_candidates(&[EntityId(0)], &m, 3).unwrap();
        assert_eq!(full[&EntityId(0)].len(), 3);
        assert!(matches!(
            build_candidates(&[EntityId(0)], &m, 4),
            Err(RetrievalError::KTooLarge { .. })
        ));
        assert!(matches!(
            build_candidates(&[EntityId(5)], &m, 1),
            Err(RetrievalError::UnknownSource(EntityId(5)))
        ));
    }

    #[test]
    fn unsorted_columns_still_tie_break_on_id() {
        let m = ScoreMatrix::from_rows(
            vec![EntityId(0)],
            vec![EntityId(9), EntityId(3), EntityId(5)],
            vec![vec![0.5, 0.5, 0.1]],
        );
        let c = build_candidates(&[EntityId(0)], &m, 2).unwrap();
        assert_eq!(c[&EntityId(0)].targets(), vec![EntityId(3), EntityId(9)]);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap(&set(&[0.9, 0.9])).unwrap(), 0.0);
        assert_eq!(gap(&set(&[0.75, 0.25])).unwrap(), 0.5);
        assert!(matches!(gap(&set(&[0.7])), Err(RetrievalError::GapUndefined(_))));
    }

    #[test]
    fn uncertain_membership_is_strict() {
        let mut map = BTreeMap::new();
        map.insert(EntityId(0), set(&[0.90, 0.86]));
        let mut b = set(&[0.75, 0.5]);
        b.source = EntityId(1);
        map.insert(EntityId(1), b);
        let (u, direct) = build_uncertain(&map, 0.05).unwrap();
        assert!(u.members.contains(&EntityId(0)));
        assert!(!u.members.contains(&EntityId(1)));
        assert_eq!(direct.len(), 1);
        assert_eq!(direct[0].provenance, Provenance::Direct);
        let (u, _) = build_uncertain(&map, 0.25).unwrap();
        assert!(!u.members.contains(&EntityId(1)), "gap == delta1 is not uncertain");
    }

    #[test]
    fn uncertain_rejects_singletons() {
        let mut map = BTreeMap::new();
        map.insert(EntityId(0), set(&[0.9]));
        assert!(build_uncertain(&map, 0.05).is_err());
        assert!(build_uncertain(&BTreeMap::new(), -1.0).is_err());
    }

    #[test]
    fn provenance_text_round_trip() {
        for p in [Provenance::Direct, Provenance::Ldv, Provenance::Dda { round: 3 }] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("dda-x".parse::<Provenance>().is_err());
    }

    #[test]
    fn dump_round_trip() {
        let m = matrix(vec![vec![0.2, 0.9, 0.4], vec![0.3, 0.3, 0.1]]);
        let c = build_candidates(&[EntityId(0), EntityId(1)], &m, 3).unwrap();
        let text = encode_candidate_dump(&c);
        assert!(text.starts_with("{\"source\":0,\"candidates\":[[101,0.9],"));
        assert_eq!(decode_candidate_dump(&text).unwrap(), c);
        assert!(decode_candidate_dump("{\"source\":1,\"candidates\":[[1,0.1],[2,0.5]],\"gap\":0}").is_err());
    }
}
