use std::fs;
use std::path::Path;

use kgalign_core::agents::BackendKind;
use kgalign_core::eval::synth::{generate, write_dataset, SynthConfig};
use kgalign_core::eval::{
    corpus_from_dataset, load_dataset, read_outcomes, run_pipeline, write_outcomes, ConfigError, PipelineConfig,
    PipelineError,
};

fn dataset(dir: &Path, entities: usize) {
    let ds = generate(&SynthConfig {
        entities,
        ..Default::default()
    })
    .unwrap();
    write_dataset(&ds, dir).unwrap();
}

fn cfg(root: &Path) -> PipelineConfig {
    PipelineConfig {
        data_dir: root.join("data"),
        out_dir: root.join("out"),
        ..Default::default()
    }
}

#[test]
fn outcomes_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"), 120);
    let run = run_pipeline(&cfg(tmp.path())).unwrap();
    let back = read_outcomes(&tmp.path().join("out")).unwrap();
    assert_eq!(back.len(), run.outcomes.len());
    for (a, b) in back.iter().zip(&run.outcomes) {
        assert_eq!(a.decision, b.decision);
        assert_eq!(a.ranking, b.ranking);
    }
    let again = tmp.path().join("again");
    fs::create_dir_all(&again).unwrap();
    write_outcomes(&again, &back).unwrap();
    for f in ["ldv.jsonl", "transcripts.jsonl"] {
        assert_eq!(fs::read(again.join(f)).unwrap(), fs::read(tmp.path().join("out").join(f)).unwrap());
    }
}

#[test]
fn report_shape() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"), 120);
    let run = run_pipeline(&cfg(tmp.path())).unwrap();
    let r = &run.report;
    let hits: Vec<f64> = r.metrics.hits.values().copied().collect();
    assert!(hits.windows(2).all(|w| w[0] <= w[1]), "Hits@K not monotone: {hits:?}");
    assert!(r.metrics.hits[&1] <= r.metrics.mrr && r.metrics.mrr <= 1.0);
    let p = &r.partition;
    assert_eq!(p.direct + p.uncertain, r.metrics.n);
    assert_eq!(p.resolved_by_ldv + p.forwarded, p.uncertain);
    let by_prov: usize = r.per_provenance.values().map(|m| m.n).sum();
    assert_eq!(by_prov, r.metrics.n);
    assert_eq!(r.cost.entities, p.uncertain);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!(v.get("timings").is_none());
    assert!(tmp.path().join("out/timings.json").exists());
}

#[test]
fn failure_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"), 60);
    let mut c = cfg(tmp.path());
    c.backend.kind = BackendKind::Scripted;
    c.backend.fixtures = Some(tmp.path().join("missing.jsonl"));
    let err = run_pipeline(&c).unwrap_err();
    assert!(matches!(err, PipelineError::Backend { stage: "debate", .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(tmp.path().join("out/config.json").exists());
    assert!(tmp.path().join("out/candidates.jsonl").exists());
    assert!(!tmp.path().join("out/report.json").exists());
}

#[test]
fn data_errors_carry_stage_and_code() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"), 60);
    fs::write(tmp.path().join("data/ref_ent_ids"), "0\t99999\n").unwrap();
    let err = run_pipeline(&cfg(tmp.path())).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().starts_with("[ingest]"), "{err}");
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    fs::write(&path, r#"{"debate.delta1": 0.1, "debate.ladder": [5, 10], "retrieval.k": 10, "backend.kind": "abstain"}"#).unwrap();
    let mut c = PipelineConfig::from_file(&path).unwrap();
    assert_eq!(c.debate.delta1, 0.1);
    assert_eq!(c.debate.ladder, vec![5, 10]);
    assert_eq!(c.backend.kind, BackendKind::Abstain);
    c.set_str("debate.rounds", "4").unwrap();
    assert_eq!(c.debate.max_rounds, 4);
    c.validate().unwrap();

    let flat = c.to_flat();
    let mut rebuilt = PipelineConfig::default();
    rebuilt.apply_json(&serde_json::to_string(&flat).unwrap()).unwrap();
    assert_eq!(rebuilt.to_flat(), flat);

    fs::write(&path, r#"{"debate.delta9": 1}"#).unwrap();
    assert!(matches!(PipelineConfig::from_file(&path), Err(ConfigError::UnknownKey(_))));
    c.retrieval_k = 5;
    assert!(c.validate().is_err(), "K below the ladder maximum");
}

#[test]
fn corpus_stage_over_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"), 80);
    let ds = load_dataset(&tmp.path().join("data")).unwrap();
    let out = corpus_from_dataset(&ds, None).unwrap();
    let m = &out.manifest;
    assert_eq!(m.counts.positive, ds.seeds.len());
    assert_eq!(m.counts.name_negative, ds.seeds.len());
    assert_eq!(m.counts.positive + m.counts.name_negative + m.counts.degree_negative, out.records.len());
    let floored = corpus_from_dataset(&ds, Some(0.99)).unwrap();
    assert!(floored.manifest.counts.name_negative <= m.counts.name_negative);
    assert_eq!(floored.manifest.floor, Some(0.99));
}
