use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgalign_core::corpus::{serialize_corpus, serialize_pairs, TrainerConfig};
use kgalign_core::eval::synth::{generate, write_dataset, SynthConfig};
use kgalign_core::eval::{
    build_agents, corpus_from_dataset, encode_decisions, evaluate, load_dataset, merge_decisions, read_outcomes, resolve,
    retrieve, run_pipeline, write_outcomes, ConfigError, PipelineConfig, PipelineError,
};
use kgalign_core::retrieval::{build_uncertain, decode_candidate_dump, encode_candidate_dump};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "kgalign", version, about = "Entity alignment: embedding retrieval with agent verification and debate")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Any `module.key` config entry may also be passed as `--module.key VALUE`.
#[derive(Args, Debug)]
struct Global {
    /// JSON config file with flat `module.key` entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// offline or live.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    delta1: Option<f64>,
    #[arg(long, global = true)]
    delta2: Option<f64>,
    /// Maximum debate rounds.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Candidate ladder, e.g. 5,10,15,20.
    #[arg(long, global = true)]
    ladder: Option<String>,
    /// Agent backend: http, scripted, oracle or abstain.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a dataset, print its summary.
    Ingest,
    /// Mine negatives from the training seeds and write the preference corpus.
    BuildCorpus,
    /// Score, retrieve top-K candidates and partition sources.
    Retrieve,
    /// Verify and debate the uncertain sources from a prior `retrieve`.
    Debate,
    /// Score stored decisions against the reference pairs.
    Evaluate,
    /// Every stage end to end.
    Run,
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Destination directory.
    dir: PathBuf,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    collision_rate: Option<f64>,
    #[arg(long)]
    attribute_noise: Option<f64>,
}

/// Rewrites `--module.key VALUE` and `--module.key=VALUE` into `--set`.
fn expand_dotted(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            out.push(a);
            continue;
        };
        out.push("--set".into());
        match flag.split_once('=') {
            Some(_) => out.push(flag.to_string()),
            None => out.push(format!("{flag}={}", it.next().unwrap_or_default())),
        }
    }
    out
}

fn build_config(g: &Global) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    let mut named: Vec<(&str, String)> = Vec::new();
    if let Some(v) = &g.data {
        named.push(("data.dir", v.display().to_string()));
    }
    if let Some(v) = &g.out {
        named.push(("output.dir", v.display().to_string()));
    }
    if let Some(v) = &g.mode {
        named.push(("run.mode", v.clone()));
    }
    if let Some(v) = g.delta1 {
        named.push(("debate.delta1", v.to_string()));
    }
    if let Some(v) = g.delta2 {
        named.push(("debate.delta2", v.to_string()));
    }
    if let Some(v) = g.rounds {
        named.push(("debate.rounds", v.to_string()));
    }
    if let Some(v) = &g.ladder {
        named.push(("debate.ladder", v.clone()));
    }
    if let Some(v) = &g.backend {
        named.push(("backend.kind", v.clone()));
    }
    for (k, v) in named {
        cfg.set_str(k, &v)?;
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set_str(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(stage: &'static str, path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { stage, path, source }
}

fn put(stage: &'static str, path: PathBuf, body: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(&path, body).map_err(io_err(stage, &path))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn out_dir(cfg: &PipelineConfig, stage: &'static str) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(stage, &cfg.out_dir))?;
    Ok(cfg.out_dir.clone())
}

fn execute(cmd: &Command, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    match cmd {
        Command::Ingest => {
            let ds = load_dataset(&cfg.data_dir)?;
            let summary = json(&ds.summary());
            put("ingest", out_dir(cfg, "ingest")?.join("ingest.json"), &summary)?;
            print!("{summary}");
        }
        Command::BuildCorpus => {
            let ds = load_dataset(&cfg.data_dir)?;
            let c = corpus_from_dataset(&ds, cfg.corpus_floor)?;
            let out = out_dir(cfg, "build-corpus")?;
            put("build-corpus", out.join("corpus.jsonl"), serialize_corpus(&c.records))?;
            put("build-corpus", out.join("negatives.tsv"), serialize_pairs(&c.negatives))?;
            put("build-corpus", out.join("manifest.json"), json(&c.manifest))?;
            put("build-corpus", out.join("trainer.json"), json(&TrainerConfig::default()))?;
            print!("{}", json(&c.manifest));
        }
        Command::Retrieve => {
            let ds = load_dataset(&cfg.data_dir)?;
            let ret = retrieve(&ds, cfg)?;
            let out = out_dir(cfg, "retrieve")?;
            put("retrieve", out.join("candidates.jsonl"), encode_candidate_dump(&ret.candidates))?;
            put("retrieve", out.join("decisions.tsv"), encode_decisions(&ret.direct))?;
            println!(
                "sources={} direct={} uncertain={}",
                ret.candidates.len(),
                ret.direct.len(),
                ret.uncertain.members.len()
            );
        }
        Command::Debate => {
            let ds = load_dataset(&cfg.data_dir)?;
            let out = out_dir(cfg, "debate")?;
            let path = out.join("candidates.jsonl");
            let text = fs::read_to_string(&path).map_err(io_err("debate", &path))?;
            let candidates = decode_candidate_dump(&text).map_err(|e| PipelineError::Data {
                stage: "debate",
                message: format!("{}: {e}", path.display()),
            })?;
            let (uncertain, direct) = build_uncertain(&candidates, cfg.debate.delta1).map_err(|e| PipelineError::Data {
                stage: "debate",
                message: e.to_string(),
            })?;
            let (agents, recorder) = build_agents(&ds, cfg)?;
            let outcomes = resolve(&ds, &candidates, &uncertain, &agents, cfg)?;
            write_outcomes(&out, &outcomes)?;
            if let Some(rec) = recorder {
                put("debate", out.join("fixtures.jsonl"), rec.to_jsonl())?;
            }
            put("debate", out.join("decisions.tsv"), encode_decisions(&merge_decisions(&direct, &outcomes)))?;
            let forwarded = outcomes.iter().filter(|o| o.transcript.is_some()).count();
            println!("uncertain={} forwarded={}", outcomes.len(), forwarded);
        }
        Command::Evaluate => {
            let ds = load_dataset(&cfg.data_dir)?;
            let ret = retrieve(&ds, cfg)?;
            let out = out_dir(cfg, "evaluate")?;
            let outcomes = read_outcomes(&out)?;
            let report = evaluate(&ds, &ret, &outcomes, cfg)?;
            let body = json(&report);
            put("evaluate", out.join("report.json"), &body)?;
            print!("{body}");
            if !report.upper_bound.holds {
                return Err(PipelineError::Invariant("Hits@1 exceeds retrieval Hits@K".into()));
            }
        }
        Command::Run => {
            let run = run_pipeline(cfg)?;
            let m = &run.report.metrics;
            let hits: BTreeMap<String, f64> = m.hits.iter().map(|(k, v)| (format!("hits@{k}"), *v)).collect();
            println!("{}", serde_json::json!({"n": m.n, "mrr": m.mrr, "hits": hits, "out": cfg.out_dir}));
        }
        Command::Synth(_) => unreachable!("handled before config"),
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), PipelineError> {
    let mut sc = SynthConfig::default();
    if let Some(v) = a.entities {
        sc.entities = v;
    }
    if let Some(v) = a.seed {
        sc.seed = v;
    }
    if let Some(v) = a.collision_rate {
        sc.name_collision_rate = v;
    }
    if let Some(v) = a.attribute_noise {
        sc.attribute_noise = v;
    }
    let ds = generate(&sc).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_dataset(&ds, &a.dir).map_err(io_err("synth", &a.dir))?;
    println!("wrote {} entities to {}", sc.entities, a.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_dotted(std::env::args()));
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        cmd => match build_config(&cli.global) {
            Ok(cfg) => execute(cmd, &cfg),
            Err(e) => Err(PipelineError::Config(e.to_string())),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgalign: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
