//! JSON bodies of the logits wire protocol.
//!
//! ```text
//! GET  /v1/vocab       -> {"vocab_size", "vocab_hash", "normalized", "protocol_version"}
//! POST /v1/logits      {"tokens": [..]} -> {"logprobs": [..]}
//! POST /v1/tokenize    {"text": ".."}   -> {"tokens": [..]}
//! POST /v1/detokenize  {"tokens": [..]} -> {"text": ".."}
//! errors: 400 {"error": {"code": "..", "message": ".."}}
//! ```
//!
//! Log-probabilities are JSON numbers, except excluded tokens which are sent
//! as the string `"-inf"`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::types::NEG_INF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabResponse {
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub normalized: bool,
    pub protocol_version: u32,
    /// Optional extension so clients can stop at end-of-sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensBody {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logprobs: Vec<WireLogProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }
}

/// A log-probability on the wire: a finite number or `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireLogProb(pub f64);

impl Serialize for WireLogProb {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 == NEG_INF {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom(format!(
                "cannot encode {} as a log-probability",
                self.0
            )))
        }
    }
}

impl<'de> Deserialize<'de> for WireLogProb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(WireLogProb(v)),
            Raw::Str(s) if s == "-inf" => Ok(WireLogProb(NEG_INF)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected number or \"-inf\", got {s:?}"
            ))),
        }
    }
}
