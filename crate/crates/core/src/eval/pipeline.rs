use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{rank_in_row, MetricSummary, Rank};
use super::{report_cost, CostReport, PipelineConfig};
use crate::agents::{build_backend, AgentBackend, RecordingBackend, Usage};
use crate::corpus::{build_corpus, degree_negatives, name_negatives, CorpusManifest, InstructionRecord, PreferencePair};
use crate::debate::{resolve_all, Agents, DebateContext, DebateError, DebateTranscript, EntityOutcome, FrequencyTable, LdvOutcome};
use crate::embedding::{load_store, similarity_matrix, EmbeddingError, EmbeddingStore, ScoreMatrix};
use crate::kg::{load_graph, load_pairs, EntityId, GraphFiles, KgError, KnowledgeGraph, SeedPairs, Side};
use crate::retrieval::{
    build_candidates, build_uncertain, encode_candidate_dump, AlignmentDecision, CandidateSet, Provenance,
    RetrievalError, UncertainSet,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const RANKING_CONVENTION: &str = "direct: embedding order over all targets; ldv: referee rerank of the top-K, \
then embedding order; dda: debated subset by final aggregate total, then the remaining verification order, \
then embedding order beyond K";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("[{stage}] data error: {message}")]
    Data { stage: &'static str, message: String },
    #[error("[{stage}] backend error: {message}")]
    Backend { stage: &'static str, message: String },
    #[error("[{stage}] i/o error on {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("[evaluate] invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Backend { .. } => 4,
            PipelineError::Invariant(_) => 1,
        }
    }

    fn data(stage: &'static str, e: impl ToString) -> Self {
        PipelineError::Data {
            stage,
            message: e.to_string(),
        }
    }
}

fn write(stage: &'static str, path: &Path, body: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, body).map_err(|source| PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    })
}

fn read(stage: &'static str, path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    })
}

fn to_json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report values serialize") + "\n"
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    pub source_emb: EmbeddingStore,
    pub target_emb: EmbeddingStore,
    /// Evaluated pairs.
    pub test: SeedPairs,
    /// Training seeds; empty when the dataset ships none.
    pub seeds: SeedPairs,
}

impl Dataset {
    /// Every known alignment, test and seed.
    pub fn truth(&self) -> BTreeMap<EntityId, EntityId> {
        let mut m = self.seeds.as_map();
        m.extend(self.test.as_map());
        m
    }
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

fn embedding_path(dir: &Path, stem: &str) -> Result<PathBuf, PipelineError> {
    ["bin", "jsonl"]
        .iter()
        .find_map(|ext| optional(dir, &format!("{stem}.{ext}")))
        .ok_or_else(|| PipelineError::data("ingest", format!("missing {stem}.bin or {stem}.jsonl in {}", dir.display())))
}

/// Loads a dataset directory: `ent_ids_{1,2}`, `triples_{1,2}`, optional
/// `attr_triples_{1,2}`, `ref_ent_ids`, optional `sup_ent_ids` and
/// `emb_{1,2}.bin` (or `.jsonl`).
pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    let kg_err = |e: KgError| PipelineError::data("ingest", e);
    let emb_err = |e: EmbeddingError| PipelineError::data("ingest", e);
    let side = |i: u8, s: Side| {
        load_graph(
            &GraphFiles {
                entities: dir.join(format!("ent_ids_{i}")),
                relations: dir.join(format!("triples_{i}")),
                attributes: optional(dir, &format!("attr_triples_{i}")),
            },
            s,
        )
        .map_err(kg_err)
    };
    let source = side(1, Side::Source)?;
    let target = side(2, Side::Target)?;
    let source_emb = load_store(&embedding_path(dir, "emb_1")?, Side::Source).map_err(emb_err)?;
    let target_emb = load_store(&embedding_path(dir, "emb_2")?, Side::Target).map_err(emb_err)?;
    source_emb.check_against(&source).map_err(emb_err)?;
    target_emb.check_against(&target).map_err(emb_err)?;
    let test = load_pairs(&dir.join("ref_ent_ids")).map_err(kg_err)?;
    let seeds = match optional(dir, "sup_ent_ids") {
        Some(p) => load_pairs(&p).map_err(kg_err)?,
        None => SeedPairs::default(),
    };
    test.validate(&source, &target).map_err(kg_err)?;
    seeds.validate(&source, &target).map_err(kg_err)?;
    if test.is_empty() {
        return Err(PipelineError::data("ingest", "ref_ent_ids is empty"));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Dataset {
        name,
        source,
        target,
        source_emb,
        target_emb,
        test,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub source_entities: usize,
    pub target_entities: usize,
    pub source_relation_triples: usize,
    pub target_relation_triples: usize,
    pub source_attribute_triples: usize,
    pub target_attribute_triples: usize,
    pub test_pairs: usize,
    pub seed_pairs: usize,
    pub embedding_dims: usize,
}

impl Dataset {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            source_entities: self.source.len(),
            target_entities: self.target.len(),
            source_relation_triples: self.source.relation_triples().len(),
            target_relation_triples: self.target.relation_triples().len(),
            source_attribute_triples: self.source.attribute_triples().len(),
            target_attribute_triples: self.target.attribute_triples().len(),
            test_pairs: self.test.len(),
            seed_pairs: self.seeds.len(),
            embedding_dims: self.source_emb.dims().total(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOutput {
    pub records: Vec<InstructionRecord>,
    pub manifest: CorpusManifest,
    pub negatives: Vec<PreferencePair>,
}

/// Preference corpus over the training seeds: name negatives from the
/// target store, degree negatives from the source graph.
pub fn corpus_from_dataset(ds: &Dataset, floor: Option<f64>) -> Result<CorpusOutput, PipelineError> {
    if ds.seeds.is_empty() {
        return Err(PipelineError::data("build-corpus", "no training seeds (sup_ent_ids)"));
    }
    let sources: Vec<EntityId> = ds.seeds.pairs().iter().map(|p| p.0).collect();
    let stage = |e: &dyn ToString| PipelineError::data("build-corpus", e.to_string());
    let names = name_negatives(&sources, &ds.source_emb, &ds.target_emb, &ds.seeds, floor).map_err(|e| stage(&e))?;
    let degree = degree_negatives(&ds.source, &sources).map_err(|e| stage(&e))?;
    let files = vec![
        format!("{}/sup_ent_ids", ds.name),
        format!("{}/ent_ids_1", ds.name),
        format!("{}/ent_ids_2", ds.name),
    ];
    let (records, manifest) =
        build_corpus(&ds.seeds, &names, &degree, &ds.source, &ds.target, files, floor).map_err(|e| stage(&e))?;
    let mut negatives = names;
    negatives.extend(degree);
    Ok(CorpusOutput {
        records,
        manifest,
        negatives,
    })
}

#[derive(Debug, Clone)]
pub struct RetrievalOutput {
    pub matrix: ScoreMatrix,
    pub candidates: BTreeMap<EntityId, CandidateSet>,
    pub uncertain: UncertainSet,
    pub direct: Vec<AlignmentDecision>,
}

/// Scores test sources against test targets and partitions them.
pub fn retrieve(ds: &Dataset, cfg: &PipelineConfig) -> Result<RetrievalOutput, PipelineError> {
    let sources: Vec<EntityId> = ds.test.pairs().iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let targets: Vec<EntityId> = ds.test.pairs().iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let matrix = similarity_matrix(&ds.source_emb.subset(&sources), &ds.target_emb.subset(&targets), &cfg.similarity)
        .map_err(|e| match e {
            EmbeddingError::Config(m) => PipelineError::Config(m),
            other => PipelineError::data("retrieve", other),
        })?;
    let candidates = build_candidates(&sources, &matrix, cfg.retrieval_k).map_err(|e| match e {
        RetrievalError::KTooLarge { .. } | RetrievalError::ZeroK => PipelineError::Config(e.to_string()),
        other => PipelineError::data("retrieve", other),
    })?;
    let (uncertain, direct) =
        build_uncertain(&candidates, cfg.debate.delta1).map_err(|e| PipelineError::data("retrieve", e))?;
    Ok(RetrievalOutput {
        matrix,
        candidates,
        uncertain,
        direct,
    })
}

/// Agents for every role; with `record_fixtures` the backend is wrapped so
/// exchanges can be saved.
pub fn build_agents(ds: &Dataset, cfg: &PipelineConfig) -> Result<(Agents, Option<Arc<RecordingBackend>>), PipelineError> {
    let truth = ds.truth();
    let backend = build_backend(&cfg.backend, Some(&truth)).map_err(|e| PipelineError::Backend {
        stage: "debate",
        message: e.to_string(),
    })?;
    if cfg.record_fixtures {
        let rec = Arc::new(RecordingBackend::new(backend));
        let as_backend: Arc<dyn AgentBackend> = rec.clone();
        Ok((Agents::uniform(as_backend), Some(rec)))
    } else {
        Ok((Agents::uniform(backend), None))
    }
}

/// Verification and debate for every uncertain source, in id order.
pub fn resolve(
    ds: &Dataset,
    candidates: &BTreeMap<EntityId, CandidateSet>,
    uncertain: &UncertainSet,
    agents: &Agents,
    cfg: &PipelineConfig,
) -> Result<Vec<EntityOutcome>, PipelineError> {
    let freq = FrequencyTable::from_graphs(&[&ds.source, &ds.target]);
    let ctx = DebateContext {
        source_kg: &ds.source,
        target_kg: &ds.target,
        freq: &freq,
        cfg: &cfg.debate,
        agents,
    };
    let sets = uncertain
        .members
        .iter()
        .map(|s| {
            candidates
                .get(s)
                .ok_or_else(|| PipelineError::data("debate", format!("no candidate set for uncertain source {s}")))
        })
        .collect::<Result<Vec<&CandidateSet>, _>>()?;
    resolve_all(&sets, &ctx).map_err(|e| match e {
        DebateError::Config(m) => PipelineError::Config(m),
        other => PipelineError::data("debate", other),
    })
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| serde_json::to_string(&i).expect("finite values") + "\n")
        .collect()
}

/// Writes `ldv.jsonl` (every uncertain entity) and `transcripts.jsonl`
/// (entities that went to debate).
pub fn write_outcomes(dir: &Path, outcomes: &[EntityOutcome]) -> Result<(), PipelineError> {
    write("debate", &dir.join("ldv.jsonl"), jsonl(outcomes.iter().map(|o| &o.ldv)))?;
    write(
        "debate",
        &dir.join("transcripts.jsonl"),
        jsonl(outcomes.iter().filter_map(|o| o.transcript.as_ref())),
    )
}

pub fn read_outcomes(dir: &Path) -> Result<Vec<EntityOutcome>, PipelineError> {
    let parse_lines = |name: &str| -> Result<Vec<serde_json::Value>, PipelineError> {
        read("evaluate", &dir.join(name))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::data("evaluate", format!("{name} line {}: {e}", i + 1))))
            .collect()
    };
    let mut transcripts: BTreeMap<EntityId, DebateTranscript> = BTreeMap::new();
    for v in parse_lines("transcripts.jsonl")? {
        let t: DebateTranscript = serde_json::from_value(v).map_err(|e| PipelineError::data("evaluate", e))?;
        transcripts.insert(t.source, t);
    }
    let mut out = Vec::new();
    for v in parse_lines("ldv.jsonl")? {
        let l: LdvOutcome = serde_json::from_value(v).map_err(|e| PipelineError::data("evaluate", e))?;
        let t = transcripts.remove(&l.source);
        if l.forwarded != t.is_some() {
            return Err(PipelineError::data(
                "evaluate",
                format!("entity {}: forwarded={} but transcript present={}", l.source, l.forwarded, t.is_some()),
            ));
        }
        out.push(EntityOutcome::from_parts(l, t));
    }
    if let Some(extra) = transcripts.keys().next() {
        return Err(PipelineError::data("evaluate", format!("transcript for {extra} has no verification record")));
    }
    Ok(out)
}

pub fn encode_decisions(decisions: &[AlignmentDecision]) -> String {
    decisions
        .iter()
        .map(|d| format!("{}\t{}\t{}\t{}\n", d.source, d.target, d.score, d.provenance))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub k: usize,
    pub pipeline_hits_at_1: f64,
    pub retrieval_hits_at_k: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub direct: usize,
    pub uncertain: usize,
    pub resolved_by_ldv: usize,
    pub forwarded: usize,
    pub early_terminated: usize,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub dataset: String,
    pub mode: String,
    pub backend: String,
    pub metrics: MetricSummary,
    pub per_provenance: BTreeMap<String, MetricSummary>,
    /// Embedding order alone, no agents.
    pub baseline: MetricSummary,
    pub upper_bound: UpperBound,
    pub partition: Partition,
    pub ranking_convention: String,
    pub cost: CostReport,
}

fn bucket(p: Provenance) -> &'static str {
    match p {
        Provenance::Direct => "direct",
        Provenance::Ldv => "ldv",
        Provenance::Dda { .. } => "dda",
    }
}

/// Every decision, direct and resolved, ordered by source.
pub fn merge_decisions(direct: &[AlignmentDecision], outcomes: &[EntityOutcome]) -> Vec<AlignmentDecision> {
    let mut all: Vec<AlignmentDecision> = direct.iter().copied().chain(outcomes.iter().map(|o| o.decision)).collect();
    all.sort_by_key(|d| d.source);
    all
}

pub fn evaluate(
    ds: &Dataset,
    ret: &RetrievalOutput,
    outcomes: &[EntityOutcome],
    cfg: &PipelineConfig,
) -> Result<Report, PipelineError> {
    let by_source: BTreeMap<EntityId, &EntityOutcome> = outcomes.iter().map(|o| (o.ldv.source, o)).collect();
    let row_index: BTreeMap<EntityId, usize> = ret.matrix.rows.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut ranks = Vec::new();
    let mut base_ranks = Vec::new();
    let mut retrieval_ranks = Vec::new();
    let mut buckets: BTreeMap<&str, Vec<Rank>> = BTreeMap::new();
    for &(s, t) in ds.test.pairs() {
        let row = ret.matrix.row(row_index[&s]);
        let embedding = rank_in_row(row, &ret.matrix.cols, t);
        base_ranks.push(embedding);
        retrieval_ranks.push(match ret.candidates[&s].position(t) {
            Some(p) => Rank::At(p as u64 + 1),
            None => Rank::Absent,
        });
        let (rank, prov) = match by_source.get(&s) {
            Some(o) => {
                let r = match o.ranking.iter().position(|c| *c == t) {
                    Some(p) => Rank::At(p as u64 + 1),
                    None => embedding,
                };
                (r, o.decision.provenance)
            }
            None => (embedding, Provenance::Direct),
        };
        ranks.push(rank);
        buckets.entry(bucket(prov)).or_default().push(rank);
    }
    let metric_err = |e: super::MetricError| PipelineError::data("evaluate", e);
    let metrics = MetricSummary::compute(&ranks, &cfg.hits_k).map_err(metric_err)?;
    let baseline = MetricSummary::compute(&base_ranks, &cfg.hits_k).map_err(metric_err)?;
    let per_provenance = buckets
        .into_iter()
        .map(|(k, r)| Ok((k.to_string(), MetricSummary::compute(&r, &cfg.hits_k).map_err(metric_err)?)))
        .collect::<Result<_, PipelineError>>()?;
    let k = cfg.retrieval_k;
    let retrieval_hits_at_k = super::hits_at_k(&retrieval_ranks, k as u64).map_err(metric_err)?;
    let pipeline_hits_at_1 = super::hits_at_k(&ranks, 1).map_err(metric_err)?;

    let transcripts: Vec<&DebateTranscript> = outcomes.iter().filter_map(|o| o.transcript.as_ref()).collect();
    let per_entity: Vec<Usage> = outcomes
        .iter()
        .map(|o| {
            let mut u = o.ldv.usage;
            if let Some(t) = &o.transcript {
                u.add(t.usage);
            }
            u
        })
        .collect();
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: ds.name.clone(),
        mode: cfg.mode.to_string(),
        backend: cfg.backend.kind.to_string(),
        metrics,
        per_provenance,
        baseline,
        upper_bound: UpperBound {
            k,
            pipeline_hits_at_1,
            retrieval_hits_at_k,
            holds: pipeline_hits_at_1 <= retrieval_hits_at_k,
        },
        partition: Partition {
            direct: ret.direct.len(),
            uncertain: ret.uncertain.members.len(),
            resolved_by_ldv: outcomes.iter().filter(|o| !o.ldv.forwarded).count(),
            forwarded: transcripts.len(),
            early_terminated: transcripts
                .iter()
                .filter(|t| t.rounds.last().is_some_and(|r| r.terminate && r.round < cfg.debate.max_rounds))
                .count(),
            degraded: transcripts.iter().filter(|t| t.degraded).count(),
        },
        ranking_convention: RANKING_CONVENTION.to_string(),
        cost: report_cost(&per_entity),
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub decisions: Vec<AlignmentDecision>,
    pub outcomes: Vec<EntityOutcome>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Load, retrieve, partition, verify, debate, decide and evaluate, writing
/// artifacts to `cfg.out_dir` as each stage completes.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        stage: "setup",
        path: out.clone(),
        source,
    })?;
    write("setup", &out.join("config.json"), to_json_pretty(&cfg.to_flat()))?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let ds = load_dataset(&cfg.data_dir)?;
    lap("ingest", &mut timings);
    let ret = retrieve(&ds, cfg)?;
    write("retrieve", &out.join("candidates.jsonl"), encode_candidate_dump(&ret.candidates))?;
    lap("retrieve", &mut timings);

    let (agents, recorder) = build_agents(&ds, cfg)?;
    let outcomes = resolve(&ds, &ret.candidates, &ret.uncertain, &agents, cfg)?;
    write_outcomes(out, &outcomes)?;
    if let Some(rec) = recorder {
        write("debate", &out.join("fixtures.jsonl"), rec.to_jsonl())?;
    }
    lap("debate", &mut timings);

    let decisions = merge_decisions(&ret.direct, &outcomes);
    write("decide", &out.join("decisions.tsv"), encode_decisions(&decisions))?;
    let report = evaluate(&ds, &ret, &outcomes, cfg)?;
    write("evaluate", &out.join("report.json"), to_json_pretty(&report))?;
    lap("evaluate", &mut timings);
    write("evaluate", &out.join("timings.json"), to_json_pretty(&timings))?;
    if !report.upper_bound.holds {
        return Err(PipelineError::Invariant(format!(
            "Hits@1 {} exceeds retrieval Hits@{} {}",
            report.upper_bound.pipeline_hits_at_1, report.upper_bound.k, report.upper_bound.retrieval_hits_at_k
        )));
    }
    Ok(RunOutput {
        report,
        decisions,
        outcomes,
        timings,
    })
}
