//! Metrics, pipeline orchestration, reports and the synthetic generator.

mod config;
mod metrics;
mod pipeline;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, PipelineConfig, RunMode};
pub use metrics::{hits_at_k, mrr, rank_in_row, MetricError, MetricSummary, Rank};
pub use pipeline::{
    build_agents, corpus_from_dataset, encode_decisions, evaluate, load_dataset, merge_decisions, read_outcomes, resolve, retrieve, run_pipeline,
    write_outcomes, CorpusOutput, Dataset, DatasetSummary, Partition, UpperBound,
    PipelineError, Report, RetrievalOutput, RunOutput, REPORT_SCHEMA_VERSION,
};

use crate::agents::Usage;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub entities: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub mean_tokens_per_entity: f64,
}

/// Sums per-entity usage. An empty list reports zeros.
pub fn report_cost(per_entity: &[Usage]) -> CostReport {
    let mut sum = Usage::default();
    for u in per_entity {
        sum.add(*u);
    }
    let total = sum.total();
    CostReport {
        entities: per_entity.len(),
        prompt_tokens: sum.prompt_tokens,
        completion_tokens: sum.completion_tokens,
        total_tokens: total,
        mean_tokens_per_entity: if per_entity.is_empty() {
            0.0
        } else {
            total as f64 / per_entity.len() as f64
        },
    }
}
