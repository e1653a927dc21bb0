//! Next-token log-probability providers.
//!
//! A provider wraps one model: its tokenizer and its next-token distribution.
//! Backends:
//!
//! - [`NGramModel`]: add-k smoothed n-gram LM, the in-process toy model.
//! - [`HttpProvider`]: client for the JSON wire protocol in [`wire`].
//! - [`CachedProvider`]: LRU memoization around any other provider.
//!
//! [`serve_provider`] exposes any provider over the same wire protocol.

mod cache;
mod http;
mod ngram;
mod server;
pub mod wire;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::types::{LogProbVector, TokenId};

pub use cache::CachedProvider;
pub use http::HttpProvider;
pub use ngram::{toy_train, NGramError, NGramModel, Vocabulary, BOS, EOS, UNK};
pub use server::{router, serve_provider, ServerError, ServerHandle};

/// Version of the wire protocol spoken by [`HttpProvider`] and the server.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u64, vocab_size: usize },
    #[error("could not connect to {uri}: {reason}")]
    ConnectFailed { uri: String, reason: String },
    #[error("protocol version mismatch: expected {expected}, server speaks {actual}")]
    ProtocolVersionMismatch { expected: u32, actual: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed upstream response: {0}")]
    UpstreamMalformed(String),
    #[error("upstream rejected request ({code}): {message}")]
    Upstream { code: String, message: String },
    #[error("unsupported provider uri {0:?} (expected toy:<path> or http(s)://...)")]
    UnsupportedUri(String),
    #[error(transparent)]
    Model(#[from] NGramError),
}

impl ProviderError {
    /// Whether the failure is a network/transport problem rather than bad input.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ProviderError::ConnectFailed { .. }
                | ProviderError::ProtocolVersionMismatch { .. }
                | ProviderError::Transport(_)
                | ProviderError::UpstreamMalformed(_)
                | ProviderError::Upstream { .. }
        )
    }
}

/// FNV-1a 64-bit hash of an ordered vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VocabHash(pub u64);

impl VocabHash {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    /// Hashes the vocabulary strings joined with the 0x1F unit separator.
    pub fn of<S: AsRef<str>>(vocab: &[S]) -> Self {
        let mut h = Self::OFFSET;
        let mut feed = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(Self::PRIME);
        };
        for (i, word) in vocab.iter().enumerate() {
            if i > 0 {
                feed(0x1f);
            }
            word.as_ref().bytes().for_each(&mut feed);
        }
        VocabHash(h)
    }
}

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for VocabHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("vocab hash must be 16 hex digits, got {s:?}"));
        }
        u64::from_str_radix(s, 16)
            .map(VocabHash)
            .map_err(|e| e.to_string())
    }
}

impl Serialize for VocabHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VocabHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Static description of a provider's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabInfo {
    pub vocab_size: usize,
    pub vocab_hash: VocabHash,
    /// Whether every returned vector sums to one in probability space.
    pub normalized: bool,
    /// End-of-sequence token, if the provider has one.
    pub eos: Option<TokenId>,
}

impl VocabInfo {
    pub fn pair_compatible(&self, other: &VocabInfo) -> bool {
        self.vocab_hash == other.vocab_hash && self.vocab_size == other.vocab_size
    }
}

/// Tokenizer plus next-token distribution of one model.
///
/// Implementations must be safe for concurrent queries.
pub trait Provider: Send + Sync {
    fn vocab_info(&self) -> &VocabInfo;

    /// Log-probabilities of every vocabulary token following `context`.
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector, ProviderError>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError>;
}

pub type ProviderHandle = Arc<dyn Provider>;

/// Fails with `TokenOutOfRange` on the first id outside the vocabulary.
pub fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<(), ProviderError> {
    match ids.iter().find(|id| id.index() >= vocab_size) {
        Some(id) => Err(ProviderError::TokenOutOfRange {
            id: u64::from(id.0),
            vocab_size,
        }),
        None => Ok(()),
    }
}

/// Opens a provider from a URI: `toy:<path>` loads an n-gram model file,
/// `http://` and `https://` connect to a wire-protocol server.
pub fn open(uri: &str) -> Result<ProviderHandle, ProviderError> {
    if let Some(path) = uri.strip_prefix("toy:") {
        let model = NGramModel::load(Path::new(path))?;
        Ok(Arc::new(model))
    } else if uri.starts_with("http://") || uri.starts_with("https://") {
        Ok(Arc::new(HttpProvider::connect(uri)?))
    } else {
        Err(ProviderError::UnsupportedUri(uri.to_string()))
    }
}
