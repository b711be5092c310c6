//! Entity alignment between two knowledge graphs.
//!
//! Candidates are retrieved by (CSLS-adjusted) embedding similarity; entities
//! whose top two scores are too close are resolved by a cheap three-role
//! verification pass and, when that is inconclusive, a multi-round debate
//! among specialised agents. A preference corpus with hard negatives can be
//! built from the seed alignment for fine-tuning an external encoder.

pub mod agents;
pub mod corpus;
pub mod debate;
pub mod embedding;
pub mod eval;
pub mod kg;
pub mod retrieval;
pub mod tokens;
