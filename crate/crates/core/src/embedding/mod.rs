//! Per-entity feature vectors, fusion and similarity scoring.

mod io;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, Side};

pub use io::{decode_binary, decode_jsonl, encode_binary, encode_jsonl, load_store};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("similarity undefined for an all-zero vector")]
    ZeroVector,
    #[error("invalid similarity config: {0}")]
    Config(String),
    #[error("duplicate embedding for entity {0}")]
    Duplicate(EntityId),
    #[error("embedding for entity {0} has no counterpart in the {1} graph")]
    UnknownEntity(EntityId, Side),
    #[error("store is empty")]
    Empty,
    #[error("k = {k} exceeds row length {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Dense f32 vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Segment lengths of a fused vector, in name ‖ relation ‖ attribute order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub name: usize,
    pub rel: usize,
    pub attr: usize,
}

impl FeatureDims {
    pub fn total(&self) -> usize {
        self.name + self.rel + self.attr
    }
}

/// Concatenates the three feature vectors as name ‖ rel ‖ attr.
pub fn fuse(
    name: &EmbeddingVector,
    rel: &EmbeddingVector,
    attr: &EmbeddingVector,
) -> EmbeddingVector {
    let mut v = Vec::with_capacity(name.len() + rel.len() + attr.len());
    v.extend_from_slice(name.as_slice());
    v.extend_from_slice(rel.as_slice());
    v.extend_from_slice(attr.as_slice());
    EmbeddingVector(v)
}

/// Like [`fuse`] but validates raw slices first.
pub fn fuse_raw(name: &[f32], rel: &[f32], attr: &[f32]) -> Result<EmbeddingVector, EmbeddingError> {
    Ok(fuse(
        &EmbeddingVector::new(name.to_vec())?,
        &EmbeddingVector::new(rel.to_vec())?,
        &EmbeddingVector::new(attr.to_vec())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEmbedding {
    pub entity: EntityId,
    fused: EmbeddingVector,
    dims: FeatureDims,
}

impl EntityEmbedding {
    pub fn new(
        entity: EntityId,
        name: &EmbeddingVector,
        rel: &EmbeddingVector,
        attr: &EmbeddingVector,
    ) -> Self {
        Self {
            entity,
            fused: fuse(name, rel, attr),
            dims: FeatureDims {
                name: name.len(),
                rel: rel.len(),
                attr: attr.len(),
            },
        }
    }

    pub fn fused(&self) -> &[f32] {
        self.fused.as_slice()
    }

    pub fn name(&self) -> &[f32] {
        &self.fused.0[..self.dims.name]
    }

    pub fn rel(&self) -> &[f32] {
        &self.fused.0[self.dims.name..self.dims.name + self.dims.rel]
    }

    pub fn attr(&self) -> &[f32] {
        &self.fused.0[self.dims.name + self.dims.rel..]
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }
}

/// Embeddings of one graph side, ordered by ascending entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    side: Side,
    dims: FeatureDims,
    entries: Vec<EntityEmbedding>,
    index: HashMap<EntityId, usize>,
}

impl EmbeddingStore {
    pub fn new(
        side: Side,
        dims: FeatureDims,
        mut entries: Vec<EntityEmbedding>,
    ) -> Result<Self, EmbeddingError> {
        for e in &entries {
            if e.dims != dims {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dims.total(),
                    found: e.dims.total(),
                });
            }
        }
        entries.sort_by_key(|e| e.entity);
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.entity, i).is_some() {
                return Err(EmbeddingError::Duplicate(e.entity));
            }
        }
        Ok(Self {
            side,
            dims,
            entries,
            index,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EntityEmbedding] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<EntityId> {
        self.entries.iter().map(|e| e.entity).collect()
    }

    pub fn get(&self, id: EntityId) -> Option<&EntityEmbedding> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    /// Fails if any stored id is missing from `graph`.
    pub fn check_against(&self, graph: &KnowledgeGraph) -> Result<(), EmbeddingError> {
        match self.entries.iter().find(|e| !graph.contains(e.entity)) {
            Some(e) => Err(EmbeddingError::UnknownEntity(e.entity, graph.side())),
            None => Ok(()),
        }
    }

    /// Restricts the store to the given ids (ids not present are ignored).
    pub fn subset(&self, ids: &[EntityId]) -> Self {
        let entries = ids
            .iter()
            .filter_map(|id| self.get(*id).cloned())
            .collect::<Vec<_>>();
        Self::new(self.side, self.dims, entries).expect("subset of a valid store")
    }
}

/// Cosine similarity computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Csls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub metric: Metric,
    pub csls_k: usize,
    /// Min-max normalize each source row into [0, 1].
    pub normalize: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Csls,
            csls_k: 10,
            normalize: true,
        }
    }
}

/// Dense row-major score matrix: rows are source entities, columns targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub rows: Vec<EntityId>,
    pub cols: Vec<EntityId>,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: Vec<EntityId>, cols: Vec<EntityId>, data: Vec<Vec<f64>>) -> Self {
        assert_eq!(rows.len(), data.len(), "row count");
        assert!(data.iter().all(|r| r.len() == cols.len()), "column count");
        Self {
            rows,
            cols,
            data: data.into_iter().flatten().collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols.len() + j]
    }

    pub fn row_of(&self, source: EntityId) -> Option<&[f64]> {
        self.rows.iter().position(|r| *r == source).map(|i| self.row(i))
    }

    /// Maps every row onto [0, 1]; a constant row becomes all ones.
    pub fn normalize_rows(&mut self) {
        let w = self.cols.len();
        if w == 0 {
            return;
        }
        self.data.par_chunks_mut(w).for_each(|row| {
            let (lo, hi) = row
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            for v in row.iter_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 1.0 };
            }
        });
    }
}

fn cosine_matrix(sources: &EmbeddingStore, targets: &EmbeddingStore) -> Result<Vec<f64>, EmbeddingError> {
    if sources.dims.total() != targets.dims.total() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: sources.dims.total(),
            found: targets.dims.total(),
        });
    }
    let rows: Result<Vec<Vec<f64>>, _> = sources
        .entries
        .par_iter()
        .map(|s| {
            targets
                .entries
                .iter()
                .map(|t| cosine(s.fused(), t.fused()))
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Mean of the `k` largest values.
fn mean_top_k(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// Raw CSLS scores: `2 cos(x, y) - r_T(x) - r_S(y)` where `r_T(x)` is the mean
/// cosine of `x` to its `csls_k` nearest targets and `r_S(y)` the mean cosine
/// of `y` to its `csls_k` nearest sources.
pub fn csls_matrix(
    sources: &EmbeddingStore,
    targets: &EmbeddingStore,
    cfg: &SimilarityConfig,
) -> Result<ScoreMatrix, EmbeddingError> {
    if sources.is_empty() || targets.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    let k = cfg.csls_k;
    if k == 0 || k > targets.len() || k > sources.len() {
        return Err(EmbeddingError::Config(format!(
            "csls_k = {k} must be in 1..={} ({} sources, {} targets)",
            targets.len().min(sources.len()),
            sources.len(),
            targets.len()
        )));
    }
    let cos = cosine_matrix(sources, targets)?;
    let (n, m) = (sources.len(), targets.len());
    let r_t: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| mean_top_k(cos[i * m..(i + 1) * m].iter().copied(), k))
        .collect();
    let r_s: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| mean_top_k((0..n).map(|i| cos[i * m + j]), k))
        .collect();
    let data = (0..n * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            2.0 * cos[idx] - r_t[i] - r_s[j]
        })
        .collect();
    Ok(ScoreMatrix {
        rows: sources.ids(),
        cols: targets.ids(),
        data,
    })
}

/// Similarity matrix under the configured metric, optionally row-normalized.
pub fn similarity_matrix(
    sources: &EmbeddingStore,
    targets: &EmbeddingStore,
    cfg: &SimilarityConfig,
) -> Result<ScoreMatrix, EmbeddingError> {
    let mut m = match cfg.metric {
        Metric::Csls => csls_matrix(sources, targets, cfg)?,
        Metric::Cosine => {
            if sources.is_empty() || targets.is_empty() {
                return Err(EmbeddingError::Empty);
            }
            ScoreMatrix {
                rows: sources.ids(),
                cols: targets.ids(),
                data: cosine_matrix(sources, targets)?,
            }
        }
    };
    if cfg.normalize {
        m.normalize_rows();
    }
    Ok(m)
}

/// The `k` best `(index, score)` entries, descending; ties go to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Result<Vec<(usize, f64)>, EmbeddingError> {
    if k > row.len() {
        return Err(EmbeddingError::KTooLarge { k, len: row.len() });
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let by_score = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < row.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, by_score);
        idx.truncate(k);
    }
    idx.sort_by(by_score);
    idx.truncate(k);
    Ok(idx.into_iter().map(|i| (i, row[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn fuse_concatenates() {
        assert_eq!(fuse(&v(&[1.0]), &v(&[2.0]), &v(&[3.0])).as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn fuse_4096_dims() {
        let x = v(&vec![0.5; 4096]);
        assert_eq!(fuse(&x, &x, &x).len(), 12288);
    }

    #[test]
    fn fuse_rejects_nan() {
        assert!(matches!(
            fuse_raw(&[1.0], &[f32::NAN], &[0.0]),
            Err(EmbeddingError::NonFinite(0))
        ));
        assert!(fuse_raw(&[f32::INFINITY], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn entity_embedding_slices_back() {
        let e = EntityEmbedding::new(EntityId(1), &v(&[1.0, 2.0]), &v(&[3.0]), &v(&[4.0, 5.0, 6.0]));
        assert_eq!(e.name(), &[1.0, 2.0]);
        assert_eq!(e.rel(), &[3.0]);
        assert_eq!(e.attr(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[3.0, -1.0], &[3.0, -1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbeddingError::ZeroVector)));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_matches_extended_precision() {
        // 32 / sqrt(14 * 77), evaluated with mpmath at 50 digits.
        let expected = 0.974_631_846_197_076_3_f64;
        assert!((cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.1, 0.9, 0.5], 2).unwrap(), vec![(1, 0.9), (2, 0.5)]);
        let idx: Vec<_> = top_k(&[0.3; 5], 3).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(matches!(top_k(&[0.1], 2), Err(EmbeddingError::KTooLarge { .. })));
        assert!(top_k(&[0.1, 0.2], 0).unwrap().is_empty());
    }

    #[test]
    fn csls_single_pair_is_zero() {
        let s = EmbeddingStore::new(
            Side::Source,
            FeatureDims { name: 1, rel: 1, attr: 1 },
            vec![EntityEmbedding::new(EntityId(0), &v(&[1.0]), &v(&[2.0]), &v(&[3.0]))],
        )
        .unwrap();
        let t = EmbeddingStore::new(
            Side::Target,
            s.dims(),
            vec![EntityEmbedding::new(EntityId(9), &v(&[1.0]), &v(&[2.0]), &v(&[3.0]))],
        )
        .unwrap();
        let cfg = SimilarityConfig {
            metric: Metric::Csls,
            csls_k: 1,
            normalize: false,
        };
        let m = csls_matrix(&s, &t, &cfg).unwrap();
        assert!(m.get(0, 0).abs() < 1e-12);
        let bad = SimilarityConfig { csls_k: 2, ..cfg };
        assert!(matches!(csls_matrix(&s, &t, &bad), Err(EmbeddingError::Config(_))));
    }

    #[test]
    fn normalize_constant_row() {
        let mut m = ScoreMatrix::from_rows(
            vec![EntityId(0), EntityId(1)],
            vec![EntityId(5), EntityId(6), EntityId(7)],
            vec![vec![0.2, 0.2, 0.2], vec![-1.0, 0.0, 1.0]],
        );
        m.normalize_rows();
        assert_eq!(m.row(0), &[1.0, 1.0, 1.0]);
        assert_eq!(m.row(1), &[0.0, 0.5, 1.0]);
    }
}
