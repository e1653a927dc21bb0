//! Extraction runs, sweeps, the toy exact-unlearning pair and report output.

use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_jsonl, materialize, DatasetError, RawRecord};
use crate::guidance::{baseline_decode, decode, GuidanceError};
use crate::metrics::{rouge_l_recall, summarize, MetricsError, TauScore};
use crate::provider::{
    self, CachedProvider, NGramError, NGramModel, ProviderError, ProviderHandle, ServerError,
    VocabHash, Vocabulary,
};
use crate::types::{
    check_gamma, check_tau, check_w, ConfigError, ExtractionRecord, ExtractionResult,
    GuidanceConfig, Method, DEFAULT_GAMMA, DEFAULT_TAUS, DEFAULT_W,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] NGramError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl HarnessError {
    /// Process exit code: 2 for transport failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let transport = match self {
            HarnessError::Provider(e) => e.is_transport(),
            HarnessError::Guidance(GuidanceError::Provider(e)) => e.is_transport(),
            HarnessError::Server(_) => true,
            _ => false,
        };
        if transport {
            2
        } else {
            1
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Guided-decoding cells to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub w_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
}

impl SweepGrid {
    pub fn single(w: f64, gamma: f64) -> Self {
        Self {
            w_values: vec![w],
            gamma_values: vec![gamma],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.w_values.is_empty() || self.gamma_values.is_empty() {
            return Err(HarnessError::InvalidGrid(
                "needs at least one w and one gamma".into(),
            ));
        }
        self.w_values.iter().try_for_each(|&w| check_w(w))?;
        self.gamma_values.iter().try_for_each(|&g| check_gamma(g))?;
        Ok(())
    }

    /// `(w, gamma)` pairs, w-major.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.w_values
            .iter()
            .flat_map(|&w| self.gamma_values.iter().map(move |&g| (w, g)))
            .collect()
    }
}

/// Settings shared by every run mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub w: f64,
    pub gamma: f64,
    /// Global cap; each record otherwise decodes as many tokens as its target.
    pub max_new_tokens: Option<usize>,
    pub tau_list: Vec<f64>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub cache_size: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            gamma: DEFAULT_GAMMA,
            max_new_tokens: None,
            tau_list: DEFAULT_TAUS.to_vec(),
            workers: 1,
            cache_size: 0,
        }
    }
}

impl AuditConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        check_w(self.w)?;
        check_gamma(self.gamma)?;
        if self.max_new_tokens == Some(0) {
            return Err(ConfigError::OutOfRange {
                field: "max_new_tokens",
                value: 0.0,
            }
            .into());
        }
        if self.tau_list.is_empty() {
            return Err(ConfigError::OutOfRange {
                field: "tau_list",
                value: f64::NAN,
            }
            .into());
        }
        self.tau_list.iter().try_for_each(|&t| check_tau(t))?;
        Ok(())
    }

    fn for_record(&self, record: &ExtractionRecord, w: f64, gamma: f64) -> GuidanceConfig {
        GuidanceConfig {
            w,
            gamma,
            max_new_tokens: self.max_new_tokens.unwrap_or(record.target_ids.len()),
            tau_list: self.tau_list.clone(),
        }
    }
}

/// What to decode for every record.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub grid: Option<SweepGrid>,
    pub pre_only: bool,
    pub post_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub w: Option<f64>,
    pub gamma: Option<f64>,
    pub mean_rouge_l_recall: f64,
    pub a_esr: Vec<TauScore>,
    pub records: usize,
    pub skipped: usize,
    /// Guided cell with the highest mean recall.
    pub best: bool,
}

impl ReportRow {
    pub fn a_esr_at(&self, tau: f64) -> Option<f64> {
        self.a_esr.iter().find(|t| t.tau == tau).map(|t| t.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub config: AuditConfig,
    pub grid: Option<SweepGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub vocab_hash: VocabHash,
    /// False when a provider returns unnormalized log-scores.
    pub normalized: bool,
    pub config: ConfigEcho,
    pub corpus_size: usize,
    pub skipped: Vec<SkippedRecord>,
    pub rows: Vec<ReportRow>,
    pub results: Vec<ExtractionResult>,
    /// Not serialized, so reports stay byte-stable.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ReportSummary {
    pub fn row(&self, method: Method, w: Option<f64>, gamma: Option<f64>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.w == w && r.gamma == gamma)
    }

    pub fn best_guided(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.best)
    }
}

/// Opens a provider URI, optionally behind an LRU cache.
pub fn open_provider(uri: &str, cache_size: usize) -> Result<ProviderHandle, ProviderError> {
    let inner = provider::open(uri)?;
    Ok(match NonZeroUsize::new(cache_size) {
        Some(cap) => Arc::new(CachedProvider::new(inner, cap)),
        None => inner,
    })
}

fn open_pair(
    pre_uri: &str,
    post_uri: &str,
    cache_size: usize,
) -> Result<(ProviderHandle, ProviderHandle), HarnessError> {
    let pre = open_provider(pre_uri, cache_size)?;
    let post = if post_uri == pre_uri {
        pre.clone()
    } else {
        open_provider(post_uri, cache_size)?
    };
    Ok((pre, post))
}

fn score(
    record: &ExtractionRecord,
    method: Method,
    cell: Option<(f64, f64)>,
    ids: Vec<crate::types::TokenId>,
    detok: &ProviderHandle,
) -> Result<ExtractionResult, HarnessError> {
    let generated_text = detok.detokenize(&ids)?;
    let rouge = match rouge_l_recall(&record.target_text, &generated_text) {
        Ok(r) => r,
        // A target made only of punctuation has no words to recover.
        Err(MetricsError::EmptyReference) => 0.0,
        Err(e) => return Err(e.into()),
    };
    Ok(ExtractionResult {
        record_id: record.id.clone(),
        method,
        w: cell.map(|c| c.0),
        gamma: cell.map(|c| c.1),
        generated_ids: ids,
        generated_text,
        rouge_l_recall: rouge,
    })
}

fn run_record(
    record: &ExtractionRecord,
    pre: &ProviderHandle,
    post: &ProviderHandle,
    plan: &Plan,
    cfg: &AuditConfig,
) -> Result<Vec<ExtractionResult>, HarnessError> {
    let mut out = Vec::new();
    let base = cfg.for_record(record, cfg.w, cfg.gamma);
    if plan.pre_only {
        let ids = baseline_decode(pre.as_ref(), &record.prefix_ids, &base)?;
        out.push(score(record, Method::PreOnly, None, ids, pre)?);
    }
    if plan.post_only {
        let ids = baseline_decode(post.as_ref(), &record.prefix_ids, &base)?;
        out.push(score(record, Method::PostOnly, None, ids, pre)?);
    }
    if let Some(grid) = &plan.grid {
        for (w, gamma) in grid.cells() {
            let g = cfg.for_record(record, w, gamma);
            let ids = decode(pre.as_ref(), post.as_ref(), &record.prefix_ids, &g)?;
            out.push(score(record, Method::Guided, Some((w, gamma)), ids, pre)?);
        }
    }
    Ok(out)
}

/// Materializes `raws` with the pre-model's tokenizer and evaluates `plan`.
///
/// Records are decoded on `cfg.workers` threads; results are sorted before
/// aggregation so the report does not depend on scheduling.
pub fn audit(
    pre: ProviderHandle,
    post: ProviderHandle,
    raws: &[RawRecord],
    plan: &Plan,
    cfg: &AuditConfig,
) -> Result<ReportSummary, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    if let Some(grid) = &plan.grid {
        grid.validate()?;
    }
    let (pi, qi) = (pre.vocab_info().clone(), post.vocab_info().clone());
    if !pi.pair_compatible(&qi) {
        return Err(GuidanceError::VocabMismatch {
            pre: pi.vocab_hash,
            post: qi.vocab_hash,
        }
        .into());
    }
    if !(pi.normalized && qi.normalized) {
        log::warn!("provider pair is not normalized; guided scores are shift-invariant so decoding is unaffected");
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidGrid(format!("worker pool: {e}")))?;

    let (records, skipped) = pool.install(|| {
        let outcomes: Vec<_> = raws
            .par_iter()
            .map(|r| materialize(r, pre.as_ref()))
            .collect();
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (raw, outcome) in raws.iter().zip(outcomes) {
            match outcome {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    log::warn!("skipping record {}: {e}", raw.id);
                    skipped.push(SkippedRecord {
                        id: raw.id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        (records, skipped)
    });
    if records.is_empty() {
        return Err(MetricsError::EmptyScores.into());
    }

    let per_record: Vec<Vec<ExtractionResult>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| run_record(r, &pre, &post, plan, cfg))
            .collect::<Result<_, _>>()
    })?;
    let mut results: Vec<ExtractionResult> = per_record.into_iter().flatten().collect();
    results.sort_by(|a, b| {
        (a.method, &a.record_id)
            .cmp(&(b.method, &b.record_id))
            .then(a.w.partial_cmp(&b.w).unwrap())
            .then(a.gamma.partial_cmp(&b.gamma).unwrap())
    });

    let summaries = summarize(&results, &cfg.tau_list)?;
    let best = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| s.method == Method::Guided)
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, m)) if s.mean_rouge_l_recall <= m => acc,
            _ => Some((i, s.mean_rouge_l_recall)),
        })
        .map(|(i, _)| i);
    let rows = summaries
        .into_iter()
        .enumerate()
        .map(|(i, s)| ReportRow {
            method: s.method,
            w: s.w,
            gamma: s.gamma,
            mean_rouge_l_recall: s.mean_rouge_l_recall,
            a_esr: s.a_esr,
            records: s.records,
            skipped: skipped.len(),
            best: Some(i) == best,
        })
        .collect();

    let wall_time = started.elapsed();
    log::info!(
        "audited {} records ({} skipped) in {:.2?}",
        records.len(),
        skipped.len(),
        wall_time
    );
    Ok(ReportSummary {
        vocab_hash: pi.vocab_hash,
        normalized: pi.normalized && qi.normalized,
        config: ConfigEcho {
            config: cfg.clone(),
            grid: plan.grid.clone(),
        },
        corpus_size: raws.len(),
        skipped,
        rows,
        results,
        wall_time,
    })
}

/// Guided decoding at `(cfg.w, cfg.gamma)` plus both single-model baselines.
pub fn run_extract(
    dataset_path: &Path,
    pre_uri: &str,
    post_uri: &str,
    cfg: &AuditConfig,
) -> Result<ReportSummary, HarnessError> {
    cfg.validate()?;
    let raws = load_jsonl(dataset_path)?;
    let (pre, post) = open_pair(pre_uri, post_uri, cfg.cache_size)?;
    let plan = Plan {
        grid: Some(SweepGrid::single(cfg.w, cfg.gamma)),
        pre_only: true,
        post_only: true,
    };
    audit(pre, post, &raws, &plan, cfg)
}

/// One guided row per grid cell, baselines computed once, best cell marked.
pub fn run_sweep(
    dataset_path: &Path,
    pre_uri: &str,
    post_uri: &str,
    grid: &SweepGrid,
    base_cfg: &AuditConfig,
) -> Result<ReportSummary, HarnessError> {
    grid.validate()?;
    base_cfg.validate()?;
    let raws = load_jsonl(dataset_path)?;
    let (pre, post) = open_pair(pre_uri, post_uri, base_cfg.cache_size)?;
    let plan = Plan {
        grid: Some(grid.clone()),
        pre_only: true,
        post_only: true,
    };
    audit(pre, post, &raws, &plan, base_cfg)
}

/// Greedy decoding of the pre model, and of the post model when given.
pub fn run_baseline(
    dataset_path: &Path,
    pre_uri: &str,
    post_uri: Option<&str>,
    cfg: &AuditConfig,
) -> Result<ReportSummary, HarnessError> {
    cfg.validate()?;
    let raws = load_jsonl(dataset_path)?;
    let (pre, post) = open_pair(pre_uri, post_uri.unwrap_or(pre_uri), cfg.cache_size)?;
    let plan = Plan {
        grid: None,
        pre_only: true,
        post_only: post_uri.is_some(),
    };
    audit(pre, post, &raws, &plan, cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Trains a single model from a text corpus and writes it to `out`.
pub fn toy_train_file(
    corpus_path: &Path,
    order: usize,
    k: f64,
    out: &Path,
) -> Result<NGramModel, HarnessError> {
    let lines = read_lines(corpus_path)?;
    let model = NGramModel::train(&lines, order, k)?;
    model.save(out)?;
    Ok(model)
}

/// Paths written by [`build_toy_pair`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyPair {
    pub pre_model: PathBuf,
    pub post_model: PathBuf,
    /// The forget sentences as a full-text JSONL corpus.
    pub forget_dataset: PathBuf,
}

/// Exact-unlearning analog: the pre model sees retain and forget sentences,
/// the post model is retrained on retain only. Both share the vocabulary of
/// the union corpus.
pub fn build_toy_pair(
    retain_path: &Path,
    forget_path: &Path,
    order: usize,
    k: f64,
    out_dir: &Path,
) -> Result<ToyPair, HarnessError> {
    let retain = read_lines(retain_path)?;
    let forget = read_lines(forget_path)?;
    if retain.is_empty() || forget.is_empty() {
        return Err(NGramError::EmptyCorpus.into());
    }
    let union: Vec<&String> = retain.iter().chain(&forget).collect();
    let vocab = Vocabulary::from_corpus(&union);
    let pre = NGramModel::train_with_vocab(&union, order, k, vocab.clone())?;
    let post = NGramModel::train_with_vocab(&retain, order, k, vocab)?;

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let pair = ToyPair {
        pre_model: out_dir.join("pre.json"),
        post_model: out_dir.join("post.json"),
        forget_dataset: out_dir.join("forget.jsonl"),
    };
    pre.save(&pair.pre_model)?;
    post.save(&pair.post_model)?;
    let width = forget.len().to_string().len();
    let jsonl: String = forget
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let line = serde_json::json!({ "id": format!("f{:0width$}", i + 1), "text": text });
            format!("{line}\n")
        })
        .collect();
    fs::write(&pair.forget_dataset, jsonl).map_err(|e| io_err(&pair.forget_dataset, e))?;
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn report_json(summary: &ReportSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("report serializes");
    s.push('\n');
    s
}

fn fmt_f64(v: f64) -> String {
    // Debug keeps a trailing ".0" on integral values and round-trips exactly.
    format!("{v:?}")
}

/// One row per method and cell:
/// `method,w,gamma,mean_rouge_l_recall,a_esr_<tau>...,records,skipped`.
pub fn report_csv(summary: &ReportSummary) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let taus = &summary.config.config.tau_list;
    let mut header = vec![
        "method".to_string(),
        "w".into(),
        "gamma".into(),
        "mean_rouge_l_recall".into(),
    ];
    header.extend(taus.iter().map(|t| format!("a_esr_{}", fmt_f64(*t))));
    header.extend(["records".into(), "skipped".into()]);
    wtr.write_record(&header).expect("in-memory write");
    for row in &summary.rows {
        let mut rec = vec![
            row.method.to_string(),
            row.w.map(fmt_f64).unwrap_or_default(),
            row.gamma.map(fmt_f64).unwrap_or_default(),
            fmt_f64(row.mean_rouge_l_recall),
        ];
        rec.extend(
            taus.iter()
                .map(|&t| row.a_esr_at(t).map(fmt_f64).unwrap_or_default()),
        );
        rec.extend([row.records.to_string(), row.skipped.to_string()]);
        wtr.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
}

pub fn emit_report(
    summary: &ReportSummary,
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let body = match format {
        ReportFormat::Json => report_json(summary),
        ReportFormat::Csv => report_csv(summary),
    };
    fs::write(path, body).map_err(|e| io_err(path, e))
}
