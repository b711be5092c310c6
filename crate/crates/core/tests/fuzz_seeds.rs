//! Replays the checked-in fuzz corpus through the same entry points the fuzz
//! targets drive, so seeds stay valid inputs and never panic on stable.

use std::fs;
use std::path::{Path, PathBuf};

use kgalign_core::agents::{parse_fixtures, parse_verdicts, Role};
use kgalign_core::corpus::{parse_corpus, serialize_corpus};
use kgalign_core::debate::{DebateTranscript, LdvOutcome};
use kgalign_core::embedding::{decode_binary, decode_jsonl, encode_binary, encode_jsonl};
use kgalign_core::eval::PipelineConfig;
use kgalign_core::kg::{parse_attributes, parse_entities, parse_pairs, parse_relations, EntityId, Side};
use kgalign_core::retrieval::{decode_candidate_dump, encode_candidate_dump};

fn corpus_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus")
}

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = corpus_root().join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).expect("seed is UTF-8")
}

#[test]
fn every_target_has_seeds() {
    let targets: Vec<String> = fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/fuzz_targets"))
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(targets.len(), 12);
    for t in targets {
        seeds(&t);
    }
}

#[test]
fn agent_output() {
    let expected = [EntityId(1), EntityId(2), EntityId(3)];
    let mut parsed = 0;
    for (name, data) in seeds("agent_output") {
        let (&sel, rest) = data.split_first().unwrap();
        let role = Role::ALL[sel as usize % Role::ALL.len()];
        if parse_verdicts(&String::from_utf8_lossy(rest), &expected, role).is_ok() {
            parsed += 1;
        } else {
            assert!(name.contains("empty"), "{name} should parse");
        }
    }
    assert!(parsed >= 5);
}

#[test]
fn kg_tables() {
    for (name, d) in seeds("kg_entities") {
        assert_eq!(parse_entities(text(&d), "seed").is_ok(), name == "synth" || name == "crlf", "{name}");
    }
    for (name, d) in seeds("kg_relations") {
        assert_eq!(parse_relations(text(&d), "seed").is_ok(), name == "synth", "{name}");
    }
    for (name, d) in seeds("kg_attributes") {
        let _ = (name, parse_attributes(text(&d), "seed"));
    }
    for (name, d) in seeds("kg_pairs") {
        assert_eq!(parse_pairs(text(&d), "seed").is_ok(), name == "synth", "{name}");
    }
}

#[test]
fn embeddings() {
    for (name, d) in seeds("embedding_binary") {
        match decode_binary(&d, Side::Source) {
            Ok(s) => assert_eq!(decode_binary(&encode_binary(&s), Side::Source).unwrap(), s, "{name}"),
            Err(_) => assert_eq!(name, "truncated"),
        }
    }
    for (name, d) in seeds("embedding_jsonl") {
        match decode_jsonl(text(&d), Side::Target) {
            Ok(s) => assert_eq!(decode_jsonl(&encode_jsonl(&s), Side::Target).unwrap(), s, "{name}"),
            Err(_) => assert_eq!(name, "mismatch"),
        }
    }
}

#[test]
fn artifacts() {
    for (name, d) in seeds("agent_fixtures") {
        assert_eq!(parse_fixtures(text(&d), "seed").is_ok(), name == "recorded", "{name}");
    }
    for (name, d) in seeds("corpus_jsonl") {
        match parse_corpus(text(&d)) {
            Ok(r) => assert_eq!(parse_corpus(&serialize_corpus(&r)).unwrap(), r),
            Err(_) => assert_eq!(name, "bad_label"),
        }
    }
    for (_, d) in seeds("candidate_dump") {
        let m = decode_candidate_dump(text(&d)).unwrap();
        assert_eq!(decode_candidate_dump(&encode_candidate_dump(&m)).unwrap(), m);
    }
    for (name, d) in seeds("pipeline_config") {
        let mut cfg = PipelineConfig::default();
        cfg.apply_json(text(&d)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, d) in seeds("debate_record") {
        let ok = match name.as_str() {
            "transcript" => serde_json::from_slice::<DebateTranscript>(&d).is_ok(),
            _ => serde_json::from_slice::<LdvOutcome>(&d).is_ok(),
        };
        assert!(ok, "{name}");
    }
}
