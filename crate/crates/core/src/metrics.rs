//! ROUGE-L recall, average extraction success rate and per-method summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{check_tau, ConfigError, ExtractionResult, Method};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference text contains no words")]
    EmptyReference,
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Length of the longest common subsequence of `a` and `b`.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Lowercased words, split on every run of non-alphanumeric characters.
pub fn normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of the reference's words covered, in order, by the candidate.
pub fn rouge_l_recall(reference: &str, candidate: &str) -> Result<f64, MetricsError> {
    let r = normalize(reference);
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let c = normalize(candidate);
    Ok(lcs_length(&r, &c) as f64 / r.len() as f64)
}

/// Per-record ROUGE-L recall for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub method: Method,
    pub per_record: BTreeMap<String, f64>,
}

impl ScoreSet {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            per_record: BTreeMap::new(),
        }
    }

    pub fn mean(&self) -> Result<f64, MetricsError> {
        mean(self.per_record.values().copied())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Result<f64, MetricsError> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(MetricsError::EmptyScores)
    } else {
        Ok(sum / n as f64)
    }
}

/// Fraction of records whose recall reaches `tau`. `tau = 1.0` counts exact
/// extractions only.
pub fn a_esr(scores: &ScoreSet, tau: f64) -> Result<f64, MetricsError> {
    check_tau(tau)?;
    if scores.per_record.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let hits = scores.per_record.values().filter(|&&s| s >= tau).count();
    Ok(hits as f64 / scores.per_record.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauScore {
    pub tau: f64,
    pub value: f64,
}

/// Aggregate metrics of one method (and, for guided rows, one `(w, gamma)`
/// cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub w: Option<f64>,
    pub gamma: Option<f64>,
    pub mean_rouge_l_recall: f64,
    pub a_esr: Vec<TauScore>,
    pub records: usize,
}

impl MethodSummary {
    pub fn a_esr_at(&self, tau: f64) -> Option<f64> {
        self.a_esr.iter().find(|t| t.tau == tau).map(|t| t.value)
    }
}

/// Groups results by `(method, w, gamma)` and computes mean recall and
/// A-ESR at each threshold. Rows come out in method order, then by `w`, then
/// by `gamma`.
pub fn summarize(
    results: &[ExtractionResult],
    tau_list: &[f64],
) -> Result<Vec<MethodSummary>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    for &tau in tau_list {
        check_tau(tau)?;
    }
    type Key = (Method, Option<u64>, Option<u64>);
    let mut groups: BTreeMap<Key, ScoreSet> = BTreeMap::new();
    for r in results {
        // Grid values are finite, so bit patterns order them (all positive).
        let key = (r.method, r.w.map(f64::to_bits), r.gamma.map(f64::to_bits));
        groups
            .entry(key)
            .or_insert_with(|| ScoreSet::new(r.method))
            .per_record
            .insert(r.record_id.clone(), r.rouge_l_recall);
    }
    groups
        .into_iter()
        .map(|((method, w, gamma), set)| {
            let a_esr = tau_list
                .iter()
                .map(|&tau| {
                    Ok(TauScore {
                        tau,
                        value: a_esr(&set, tau)?,
                    })
                })
                .collect::<Result<_, MetricsError>>()?;
            Ok(MethodSummary {
                method,
                w: w.map(f64::from_bits),
                gamma: gamma.map(f64::from_bits),
                mean_rouge_l_recall: set.mean()?,
                a_esr,
                records: set.per_record.len(),
            })
        })
        .collect()
}
