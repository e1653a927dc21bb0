//! Privacy audit for exact machine unlearning.
//!
//! Given a language model before unlearning and the same model retrained
//! without a forgetting set, guided greedy decoding contrasts their
//! next-token log-probabilities to reconstruct the forgotten text from a
//! known prefix. Extraction success is scored with ROUGE-L recall and the
//! average extraction success rate (A-ESR) at one or more thresholds.
//!
//! Modules:
//!
//! - [`types`]: shared values, configuration and the prefix split.
//! - [`provider`]: model access (toy n-gram LM, HTTP client, cache, server).
//! - [`guidance`]: candidate filter, fused scores and the decoding loops.
//! - [`metrics`]: ROUGE-L recall, A-ESR and summaries.
//! - [`dataset`]: JSONL corpora.
//! - [`harness`]: runs, sweeps, the toy unlearning pair and reports.

pub mod dataset;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod provider;
pub mod types;

pub use guidance::{baseline_decode, decode, filter_candidates, guided_scores, select_next};
pub use provider::{Provider, ProviderHandle};
pub use types::{GuidanceConfig, LogProbVector, TokenId};
