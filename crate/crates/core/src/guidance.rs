//! Guided decoding from a pre-/post-unlearning model pair.
//!
//! At every step the pre-model's distribution first restricts the candidate
//! tokens to those within a factor `gamma` of its top probability. Among the
//! candidates the token with the highest fused score
//!
//! ```text
//! post(v) + w * (pre(v) - post(v))
//! ```
//!
//! is emitted. Pushing past the pre-model by the difference between the two
//! models steers generation toward what unlearning removed. With `w = 1` the
//! score is the pre-model's own log-probability and decoding reduces to
//! greedy decoding of the pre-model.

use thiserror::Error;

use crate::provider::{Provider, ProviderError, VocabHash};
use crate::types::{
    argmax_first, check_gamma, check_w, validate_config, ConfigError, GuidanceConfig,
    LogProbVector, TokenId, NEG_INF,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("log-probability vectors differ in length ({pre} vs {post})")]
    LengthMismatch { pre: usize, post: usize },
    #[error("pre-model vector has no finite entry")]
    AllNegInf,
    #[error("provider vocabularies differ (pre {pre}, post {post})")]
    VocabMismatch { pre: VocabHash, post: VocabHash },
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Tokens the pre-model considers plausible at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Ascending token ids.
    pub member_ids: Vec<TokenId>,
    /// `max pre log-prob + ln(gamma)`; members are exactly the tokens at or
    /// above it.
    pub threshold_logprob: f64,
}

impl CandidateSet {
    pub fn contains(&self, id: TokenId) -> bool {
        self.member_ids.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedStep {
    pub scores: Vec<f64>,
    pub chosen: TokenId,
    pub candidate_count: usize,
    /// Every candidate scored `-inf`; `chosen` fell back to the pre argmax.
    pub degenerate: bool,
}

/// Keeps tokens with `p_pre(v) >= gamma * max p_pre`, compared in log space.
pub fn filter_candidates(pre: &LogProbVector, gamma: f64) -> Result<CandidateSet, GuidanceError> {
    check_gamma(gamma)?;
    let max = pre.max();
    if !max.is_finite() {
        return Err(GuidanceError::AllNegInf);
    }
    let threshold_logprob = max + gamma.ln();
    let member_ids = pre
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold_logprob)
        .map(|(i, _)| TokenId::from(i))
        .collect();
    Ok(CandidateSet {
        member_ids,
        threshold_logprob,
    })
}

/// Fused per-token score; `-inf` wherever either model excludes the token.
pub fn guided_scores(
    pre: &LogProbVector,
    post: &LogProbVector,
    w: f64,
) -> Result<Vec<f64>, GuidanceError> {
    check_w(w)?;
    if pre.vocab_size() != post.vocab_size() {
        return Err(GuidanceError::LengthMismatch {
            pre: pre.vocab_size(),
            post: post.vocab_size(),
        });
    }
    // Written as pre + (w - 1)(pre - post): algebraically the same fusion, and
    // exactly `pre` when w == 1 or pre == post.
    Ok(pre
        .values()
        .iter()
        .zip(post.values())
        .map(|(&a, &b)| {
            if a == NEG_INF || b == NEG_INF {
                NEG_INF
            } else {
                a + (w - 1.0) * (a - b)
            }
        })
        .collect())
}

/// One guided greedy step: best fused score inside the candidate set,
/// smallest id on ties.
pub fn select_next(
    pre: &LogProbVector,
    post: &LogProbVector,
    cfg: &GuidanceConfig,
) -> Result<GuidedStep, GuidanceError> {
    let scores = guided_scores(pre, post, cfg.w)?;
    let candidates = filter_candidates(pre, cfg.gamma)?;
    let mut best: Option<(TokenId, f64)> = None;
    for &id in &candidates.member_ids {
        let s = scores[id.index()];
        if s == NEG_INF {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((id, s)),
        }
    }
    let (chosen, degenerate) = match best {
        Some((id, _)) => (id, false),
        None => (pre.argmax(), true),
    };
    Ok(GuidedStep {
        scores,
        chosen,
        candidate_count: candidates.len(),
        degenerate,
    })
}

fn check_pair(pre: &dyn Provider, post: &dyn Provider) -> Result<(), GuidanceError> {
    let (a, b) = (pre.vocab_info(), post.vocab_info());
    if a.pair_compatible(b) {
        Ok(())
    } else {
        Err(GuidanceError::VocabMismatch {
            pre: a.vocab_hash,
            post: b.vocab_hash,
        })
    }
}

/// Appends tokens chosen by `step` until `<eos>` or `max_new_tokens`.
fn generate<F>(
    prefix: &[TokenId],
    max_new_tokens: usize,
    eos: Option<TokenId>,
    mut step: F,
) -> Result<Vec<TokenId>, GuidanceError>
where
    F: FnMut(&[TokenId]) -> Result<TokenId, GuidanceError>,
{
    if prefix.is_empty() {
        return Err(GuidanceError::EmptyPrefix);
    }
    let mut context = prefix.to_vec();
    for _ in 0..max_new_tokens {
        let next = step(&context)?;
        if Some(next) == eos {
            break;
        }
        context.push(next);
    }
    Ok(context.split_off(prefix.len()))
}

/// Guided greedy continuation of `prefix_ids`. The returned tokens exclude
/// the prefix and the terminating `<eos>`.
pub fn decode(
    pre: &dyn Provider,
    post: &dyn Provider,
    prefix_ids: &[TokenId],
    cfg: &GuidanceConfig,
) -> Result<Vec<TokenId>, GuidanceError> {
    let cfg = validate_config(cfg.clone())?;
    check_pair(pre, post)?;
    let eos = pre.vocab_info().eos;
    generate(prefix_ids, cfg.max_new_tokens, eos, |ctx| {
        let a = pre.next_logprobs(ctx)?;
        let b = post.next_logprobs(ctx)?;
        let step = select_next(&a, &b, &cfg)?;
        if step.degenerate {
            log::debug!(
                "degenerate guided step at position {}: fell back to pre argmax",
                ctx.len()
            );
        }
        Ok(step.chosen)
    })
}

/// Plain greedy decoding on one provider, same stopping rule as [`decode`].
pub fn baseline_decode(
    provider: &dyn Provider,
    prefix_ids: &[TokenId],
    cfg: &GuidanceConfig,
) -> Result<Vec<TokenId>, GuidanceError> {
    let cfg = validate_config(cfg.clone())?;
    let eos = provider.vocab_info().eos;
    generate(prefix_ids, cfg.max_new_tokens, eos, |ctx| {
        let lp = provider.next_logprobs(ctx)?;
        Ok(argmax_first(lp.values()).expect("LogProbVector has a finite entry"))
    })
}
