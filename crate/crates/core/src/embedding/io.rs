//! Embedding files.
//!
//! Binary layout: an ASCII header line `COUNT DIM_NAME DIM_REL DIM_ATTR\n`,
//! then `COUNT` records of an 8-byte little-endian entity id followed by
//! `DIM_NAME + DIM_REL + DIM_ATTR` little-endian f32 values.
//!
//! JSONL layout: one `{"id": .., "name": [..], "rel": [..], "attr": [..]}`
//! object per line; values are rounded to f32 on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingStore, EmbeddingVector, EntityEmbedding, FeatureDims};
use crate::kg::{EntityId, Side};

fn decode_err(msg: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Decode(msg.into())
}

pub fn decode_binary(bytes: &[u8], side: Side) -> Result<EmbeddingStore, EmbeddingError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| decode_err("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| decode_err("header is not UTF-8"))?;
    let nums: Vec<usize> = header
        .split_ascii_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| decode_err(format!("bad header {header:?}")))?;
    let [count, dn, dr, da] = nums[..] else {
        return Err(decode_err(format!(
            "header needs 4 fields, found {}",
            nums.len()
        )));
    };
    let dims = FeatureDims {
        name: dn,
        rel: dr,
        attr: da,
    };
    let record = dims
        .total()
        .checked_mul(4)
        .and_then(|v| v.checked_add(8))
        .ok_or_else(|| decode_err("dimensions overflow"))?;
    let body = &bytes[nl + 1..];
    let expected = count
        .checked_mul(record)
        .ok_or_else(|| decode_err("record count overflows"))?;
    if body.len() != expected {
        return Err(decode_err(format!(
            "body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for chunk in body.chunks_exact(record.max(1)).take(count) {
        let id = u64::from_le_bytes(chunk[..8].try_into().expect("8-byte id"));
        let values: Vec<f32> = chunk[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte float")))
            .collect();
        entries.push(split_entry(EntityId(id), values, dims)?);
    }
    EmbeddingStore::new(side, dims, entries)
}

fn split_entry(id: EntityId, values: Vec<f32>, dims: FeatureDims) -> Result<EntityEmbedding, EmbeddingError> {
    let (name, rest) = values.split_at(dims.name);
    let (rel, attr) = rest.split_at(dims.rel);
    Ok(EntityEmbedding::new(
        id,
        &EmbeddingVector::new(name.to_vec())?,
        &EmbeddingVector::new(rel.to_vec())?,
        &EmbeddingVector::new(attr.to_vec())?,
    ))
}

pub fn encode_binary(store: &EmbeddingStore) -> Vec<u8> {
    let d = store.dims();
    let mut out = format!("{} {} {} {}\n", store.len(), d.name, d.rel, d.attr).into_bytes();
    for e in store.entries() {
        out.extend_from_slice(&e.entity.0.to_le_bytes());
        for v in e.fused() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: u64,
    name: Vec<f64>,
    rel: Vec<f64>,
    attr: Vec<f64>,
}

fn to_f32(values: &[f64], line: usize) -> Result<EmbeddingVector, EmbeddingError> {
    let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
    EmbeddingVector::new(v).map_err(|e| decode_err(format!("line {line}: {e}")))
}

pub fn decode_jsonl(text: &str, side: Side) -> Result<EmbeddingStore, EmbeddingError> {
    let mut dims: Option<FeatureDims> = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line)
            .map_err(|e| decode_err(format!("line {}: {e}", i + 1)))?;
        let d = FeatureDims {
            name: rec.name.len(),
            rel: rec.rel.len(),
            attr: rec.attr.len(),
        };
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: prev.total(),
                    found: d.total(),
                })
            }
            Some(_) => {}
        }
        entries.push(EntityEmbedding::new(
            EntityId(rec.id),
            &to_f32(&rec.name, i + 1)?,
            &to_f32(&rec.rel, i + 1)?,
            &to_f32(&rec.attr, i + 1)?,
        ));
    }
    let dims = dims.unwrap_or(FeatureDims {
        name: 0,
        rel: 0,
        attr: 0,
    });
    EmbeddingStore::new(side, dims, entries)
}

pub fn encode_jsonl(store: &EmbeddingStore) -> String {
    let widen = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut out = String::new();
    for e in store.entries() {
        let rec = JsonRecord {
            id: e.entity.0,
            name: widen(e.name()),
            rel: widen(e.rel()),
            attr: widen(e.attr()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    out
}

/// Loads a store, picking the format from the extension (`.jsonl` or binary).
pub fn load_store(path: &Path, side: Side) -> Result<EmbeddingStore, EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        decode_jsonl(&fs::read_to_string(path).map_err(io_err)?, side)
    } else {
        decode_binary(&fs::read(path).map_err(io_err)?, side)
    }
}
