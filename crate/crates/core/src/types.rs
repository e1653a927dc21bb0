//! Shared value types, attack configuration and the prefix-splitting rule.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Log-probability assigned to tokens a provider excludes from its support.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Default guidance scale (Phi-1.5 setting).
pub const DEFAULT_W: f64 = 2.0;
/// Default candidate-filter strictness.
pub const DEFAULT_GAMMA: f64 = 1e-5;
/// Default A-ESR thresholds.
pub const DEFAULT_TAUS: [f64; 2] = [0.9, 1.0];

/// Index into a provider vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
}

/// Attack hyperparameters.
///
/// `w` is the guidance scale applied to the pre-minus-post log-probability
/// difference; `gamma` is the fraction of the pre-model's top probability a
/// token must reach to stay a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub w: f64,
    pub gamma: f64,
    pub max_new_tokens: usize,
    pub tau_list: Vec<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            gamma: DEFAULT_GAMMA,
            max_new_tokens: 64,
            tau_list: DEFAULT_TAUS.to_vec(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(self) -> Result<Self, ConfigError> {
        validate_config(self)
    }

    /// Same hyperparameters with a different generation cap.
    pub fn with_max_new_tokens(&self, max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            ..self.clone()
        }
    }
}

pub(crate) fn check_w(w: f64) -> Result<(), ConfigError> {
    // NaN fails the comparison.
    if w >= 1.0 && w.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field: "w",
            value: w,
        })
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<(), ConfigError> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field: "gamma",
            value: gamma,
        })
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<(), ConfigError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            field: "tau_list",
            value: tau,
        })
    }
}

/// Returns `cfg` unchanged iff every field is in range.
pub fn validate_config(cfg: GuidanceConfig) -> Result<GuidanceConfig, ConfigError> {
    check_w(cfg.w)?;
    check_gamma(cfg.gamma)?;
    if cfg.max_new_tokens == 0 {
        return Err(ConfigError::OutOfRange {
            field: "max_new_tokens",
            value: 0.0,
        });
    }
    for &tau in &cfg.tau_list {
        check_tau(tau)?;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogProbError {
    #[error("expected {expected} log-probabilities, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("log-probability vector has no finite entry")]
    AllNegInf,
    #[error("log-probability for token {0} is NaN or +inf")]
    NotALogProb(usize),
    #[error("empty vocabulary")]
    EmptyVocab,
}

/// Dense next-token log-probabilities over a whole vocabulary.
///
/// Entries are finite or [`NEG_INF`]. Unnormalized upstreams may send values
/// above zero, so only NaN and `+inf` are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbVector {
    values: Vec<f64>,
}

impl LogProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LogProbError> {
        if values.is_empty() {
            return Err(LogProbError::EmptyVocab);
        }
        if let Some(i) = values
            .iter()
            .position(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(LogProbError::NotALogProb(i));
        }
        if !values.iter().any(|v| v.is_finite()) {
            return Err(LogProbError::AllNegInf);
        }
        Ok(Self { values })
    }

    /// Like [`LogProbVector::new`] but also checks the length.
    pub fn with_len(values: Vec<f64>, vocab_size: usize) -> Result<Self, LogProbError> {
        if values.len() != vocab_size {
            return Err(LogProbError::LengthMismatch {
                expected: vocab_size,
                actual: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.values[id.index()]
    }

    /// Largest entry; always finite.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(NEG_INF, f64::max)
    }

    /// Smallest-id argmax.
    pub fn argmax(&self) -> TokenId {
        argmax_first(&self.values).expect("vector has a finite entry")
    }

    /// Log of the total probability mass. Zero for a normalized vector.
    pub fn log_sum_exp(&self) -> f64 {
        let m = self.max();
        let s: f64 = self
            .values
            .iter()
            .filter(|v| v.is_finite())
            .map(|v| (v - m).exp())
            .sum();
        m + s.ln()
    }
}

/// Index of the first maximal finite entry of `values`, if any.
pub(crate) fn argmax_first(values: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == NEG_INF {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| TokenId::from(i))
}

/// One forgetting-set item as seen by the attacker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub id: String,
    pub prefix_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
    pub prefix_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Guided,
    PreOnly,
    PostOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Guided => "guided",
            Method::PreOnly => "pre_only",
            Method::PostOnly => "post_only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoded continuation for one record under one method and its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub record_id: String,
    pub method: Method,
    /// Hyperparameters of the guided cell; `None` for baselines.
    pub w: Option<f64>,
    pub gamma: Option<f64>,
    pub generated_ids: Vec<TokenId>,
    pub generated_text: String,
    pub rouge_l_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("sequence of {0} tokens is too short to split")]
    TooShort(usize),
}

/// Splits a token sequence into the attacker-known first half and the
/// remainder. The prefix takes `ceil(T/2)` tokens.
pub fn split_prefix(token_ids: &[TokenId]) -> Result<(Vec<TokenId>, Vec<TokenId>), SplitError> {
    let t = token_ids.len();
    if t < 2 {
        return Err(SplitError::TooShort(t));
    }
    let (prefix, target) = token_ids.split_at(t.div_ceil(2));
    Ok((prefix.to_vec(), target.to_vec()))
}
