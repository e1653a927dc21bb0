//! JSONL extraction corpora.
//!
//! Each non-blank line is one record, either
//! `{"id": .., "prefix": .., "target": ..}` or `{"id": .., "text": ..}`.
//! Full-text records are tokenized and split so the attacker knows the first
//! half. Unknown fields are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::provider::{Provider, ProviderError};
use crate::types::{split_prefix, ExtractionRecord, SplitError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: record has both prefix/target and text")]
    AmbiguousShape { line: usize },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaterializeError {
    #[error("record {id}: {field} tokenizes to nothing")]
    EmptyField { id: String, field: &'static str },
    #[error("record {id}: {source}")]
    TooShort { id: String, source: SplitError },
    #[error("record {id}: {source}")]
    Provider { id: String, source: ProviderError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordBody {
    Split { prefix: String, target: String },
    Full { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub body: RecordBody,
}

#[derive(Deserialize)]
struct Line {
    id: Option<String>,
    prefix: Option<String>,
    target: Option<String>,
    text: Option<String>,
}

pub fn load_jsonl(path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    let content = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_jsonl(&content)
}

pub fn parse_jsonl(content: &str) -> Result<Vec<RawRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| DatasetError::ParseError {
            line,
            reason: e.to_string(),
        })?;
        let id = parsed
            .id
            .ok_or(DatasetError::MissingField { line, field: "id" })?;
        let body = match (parsed.prefix, parsed.target, parsed.text) {
            (Some(prefix), Some(target), None) => RecordBody::Split { prefix, target },
            (None, None, Some(text)) => RecordBody::Full { text },
            (Some(_), None, None) => {
                return Err(DatasetError::MissingField {
                    line,
                    field: "target",
                })
            }
            (None, Some(_), None) => {
                return Err(DatasetError::MissingField {
                    line,
                    field: "prefix",
                })
            }
            (None, None, None) => {
                return Err(DatasetError::MissingField {
                    line,
                    field: "text",
                })
            }
            _ => return Err(DatasetError::AmbiguousShape { line }),
        };
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { line, id });
        }
        out.push(RawRecord { id, body });
    }
    Ok(out)
}

/// Tokenizes a raw record with `provider`.
///
/// `prefix_text` is always the detokenized prefix. `target_text` is the
/// original target for prefix/target records and the detokenized remainder
/// for full-text records.
pub fn materialize(
    raw: &RawRecord,
    provider: &dyn Provider,
) -> Result<ExtractionRecord, MaterializeError> {
    let wrap = |source| MaterializeError::Provider {
        id: raw.id.clone(),
        source,
    };
    let (prefix_ids, target_ids, target_text) = match &raw.body {
        RecordBody::Split { prefix, target } => {
            let p = provider.tokenize(prefix).map_err(wrap)?;
            let t = provider.tokenize(target).map_err(wrap)?;
            for (ids, field) in [(&p, "prefix"), (&t, "target")] {
                if ids.is_empty() {
                    return Err(MaterializeError::EmptyField {
                        id: raw.id.clone(),
                        field,
                    });
                }
            }
            (p, t, target.trim().to_string())
        }
        RecordBody::Full { text } => {
            let ids = provider.tokenize(text).map_err(wrap)?;
            if ids.is_empty() {
                return Err(MaterializeError::EmptyField {
                    id: raw.id.clone(),
                    field: "text",
                });
            }
            let (p, t) = split_prefix(&ids).map_err(|source| MaterializeError::TooShort {
                id: raw.id.clone(),
                source,
            })?;
            let target_text = provider.detokenize(&t).map_err(wrap)?;
            (p, t, target_text)
        }
    };
    let prefix_text = provider.detokenize(&prefix_ids).map_err(wrap)?;
    Ok(ExtractionRecord {
        id: raw.id.clone(),
        prefix_ids,
        target_ids,
        prefix_text,
        target_text,
    })
}
