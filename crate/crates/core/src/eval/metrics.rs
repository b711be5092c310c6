use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::EntityId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("rank list is empty")]
    Empty,
}

/// Position of the true counterpart, 1-based, or absent from the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank {
    At(u64),
    Absent,
}

impl Rank {
    pub fn within(self, k: u64) -> bool {
        matches!(self, Rank::At(r) if r <= k)
    }

    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::At(r) => 1.0 / r as f64,
            Rank::Absent => 0.0,
        }
    }
}

pub fn hits_at_k(ranks: &[Rank], k: u64) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = ranks.iter().filter(|r| r.within(k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

pub fn mrr(ranks: &[Rank]) -> Result<f64, MetricError> {
    if ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(ranks.iter().map(|r| r.reciprocal()).sum::<f64>() / ranks.len() as f64)
}

/// Rank of `truth` in a score row when ties go to the lower target id.
pub fn rank_in_row(row: &[f64], cols: &[EntityId], truth: EntityId) -> Rank {
    let Some(t) = cols.iter().position(|c| *c == truth) else {
        return Rank::Absent;
    };
    let ts = row[t];
    let ahead = row
        .iter()
        .zip(cols)
        .filter(|(s, c)| **s > ts || (**s == ts && **c < truth))
        .count();
    Rank::At(ahead as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub hits: BTreeMap<u64, f64>,
    pub mrr: f64,
}

impl MetricSummary {
    pub fn compute(ranks: &[Rank], ks: &[u64]) -> Result<Self, MetricError> {
        let hits = ks
            .iter()
            .map(|&k| Ok((k, hits_at_k(ranks, k)?)))
            .collect::<Result<_, MetricError>>()?;
        let mrr = mrr(ranks)?;
        Ok(Self {
            n: ranks.len(),
            hits,
            mrr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let r = [Rank::At(1), Rank::At(2), Rank::At(4)];
        assert_eq!(hits_at_k(&r, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(hits_at_k(&r, 10).unwrap(), 1.0);
        assert!((mrr(&r).unwrap() - 1.75 / 3.0).abs() < 1e-12);
        assert_eq!(hits_at_k(&[Rank::At(1); 4], 1).unwrap(), 1.0);
        assert_eq!(hits_at_k(&r, 0), Err(MetricError::ZeroK));
        assert_eq!(mrr(&[]), Err(MetricError::Empty));
        assert_eq!(mrr(&[Rank::Absent, Rank::At(1)]).unwrap(), 0.5);
    }

    #[test]
    fn row_rank_ties_by_id() {
        let cols = [EntityId(5), EntityId(3), EntityId(9)];
        let row = [0.7, 0.7, 0.9];
        assert_eq!(rank_in_row(&row, &cols, EntityId(9)), Rank::At(1));
        assert_eq!(rank_in_row(&row, &cols, EntityId(3)), Rank::At(2));
        assert_eq!(rank_in_row(&row, &cols, EntityId(5)), Rank::At(3));
        assert_eq!(rank_in_row(&row, &cols, EntityId(1)), Rank::Absent);
    }
}
