use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lru::LruCache;

use super::{Provider, ProviderError, ProviderHandle, VocabInfo};
use crate::types::{LogProbVector, TokenId};

/// Memoizes `next_logprobs` by exact context with least-recently-used
/// eviction. Tokenization is passed through.
pub struct CachedProvider {
    inner: ProviderHandle,
    entries: Mutex<LruCache<Vec<TokenId>, LogProbVector>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedProvider {
    pub fn new(inner: ProviderHandle, capacity: NonZeroUsize) -> Self {
        Self {
            inner,
            entries: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// `(hits, misses)` so far.
    pub fn stats(&self) -> (u64, u64) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Provider for CachedProvider {
    fn vocab_info(&self) -> &VocabInfo {
        self.inner.vocab_info()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector, ProviderError> {
        if let Some(hit) = self.entries.lock().unwrap().get(context) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        // The lock is not held across the inner query; two threads racing on
        // the same context both compute it and store identical values.
        let value = self.inner.next_logprobs(context)?;
        self.entries
            .lock()
            .unwrap()
            .put(context.to_vec(), value.clone());
        Ok(value)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        self.inner.detokenize(ids)
    }
}
