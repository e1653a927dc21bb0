//! Add-k smoothed n-gram language model.
//!
//! The conditional distribution for a context `c` of `order - 1` tokens is
//! `(count(c, v) + k) / (total(c) + k * |V'|)`, where `V'` is every vocabulary
//! entry except `<bos>`. `<bos>` only ever pads contexts and is never
//! predicted, so its log-probability is always `-inf`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_ids, Provider, ProviderError, VocabHash, VocabInfo};
use crate::types::{LogProbVector, TokenId, NEG_INF};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NGramError {
    #[error("training corpus has no non-blank lines")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("smoothing constant k must be positive and finite, got {0}")]
    InvalidK(f64),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Ordered vocabulary: sorted unique words plus the three special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds the vocabulary of every whitespace token in `lines`.
    pub fn from_corpus<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: BTreeSet<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        for line in lines {
            set.extend(line.as_ref().split_whitespace().map(str::to_string));
        }
        Self::from_sorted(set.into_iter().collect()).expect("specials present")
    }

    fn from_sorted(words: Vec<String>) -> Result<Self, NGramError> {
        let index: HashMap<String, TokenId> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), TokenId::from(i)))
            .collect();
        if index.len() != words.len() {
            return Err(NGramError::InvalidModel(
                "duplicate vocabulary entry".into(),
            ));
        }
        for special in [BOS, EOS, UNK] {
            if !index.contains_key(special) {
                return Err(NGramError::InvalidModel(format!(
                    "vocabulary lacks {special}"
                )));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    fn special(&self, word: &str) -> TokenId {
        self.index[word]
    }

    pub fn hash(&self) -> VocabHash {
        VocabHash::of(&self.words)
    }

    /// Whitespace tokenization; out-of-vocabulary words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let unk = self.special(UNK);
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(unk))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Continuations {
    counts: HashMap<TokenId, u64>,
    total: u64,
}

/// Add-k smoothed n-gram model over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Vocabulary,
    table: HashMap<Vec<TokenId>, Continuations>,
    info: VocabInfo,
}

/// Trains a model whose vocabulary is the corpus's own.
pub fn toy_train<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    k: f64,
) -> Result<NGramModel, NGramError> {
    NGramModel::train(corpus, order, k)
}

impl NGramModel {
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, k: f64) -> Result<Self, NGramError> {
        let vocab = Vocabulary::from_corpus(corpus.iter().map(AsRef::as_ref));
        Self::train_with_vocab(corpus, order, k, vocab)
    }

    /// Trains on `corpus` over a caller-supplied vocabulary, so two models
    /// trained on different corpora can share one token space.
    pub fn train_with_vocab<S: AsRef<str>>(
        corpus: &[S],
        order: usize,
        k: f64,
        vocab: Vocabulary,
    ) -> Result<Self, NGramError> {
        validate_params(order, k)?;
        let lines: Vec<&str> = corpus
            .iter()
            .map(AsRef::as_ref)
            .filter(|l| !l.trim().is_empty())
            .collect();
        if lines.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        let bos = vocab.special(BOS);
        let eos = vocab.special(EOS);
        let mut table: HashMap<Vec<TokenId>, Continuations> = HashMap::new();
        for line in lines {
            let mut seq = vec![bos; order - 1];
            seq.extend(vocab.encode(line));
            seq.push(eos);
            for window in seq.windows(order) {
                let (ctx, next) = window.split_at(order - 1);
                let entry = table.entry(ctx.to_vec()).or_default();
                *entry.counts.entry(next[0]).or_insert(0) += 1;
                entry.total += 1;
            }
        }
        Ok(Self::assemble(order, k, vocab, table))
    }

    fn assemble(
        order: usize,
        k: f64,
        vocab: Vocabulary,
        table: HashMap<Vec<TokenId>, Continuations>,
    ) -> Self {
        let info = VocabInfo {
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            normalized: true,
            eos: Some(vocab.special(EOS)),
        };
        Self {
            order,
            k,
            vocab,
            table,
            info,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Raw training count of `next` after the context window `ctx`.
    pub fn count(&self, ctx: &[TokenId], next: TokenId) -> u64 {
        self.table
            .get(ctx)
            .and_then(|c| c.counts.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// The last `order - 1` tokens of `context`, left-padded with `<bos>`.
    fn window(&self, context: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let bos = self.vocab.special(BOS);
        let take = context.len().min(n);
        let mut w = vec![bos; n - take];
        w.extend_from_slice(&context[context.len() - take..]);
        w
    }

    fn conditional(&self, context: &[TokenId]) -> Vec<f64> {
        let predictable = (self.vocab.len() - 1) as f64;
        let bos = self.vocab.special(BOS).index();
        let window = self.window(context);
        let (counts, total) = match self.table.get(&window) {
            Some(c) => (Some(&c.counts), c.total),
            None => (None, 0),
        };
        let log_denom = (total as f64 + self.k * predictable).ln();
        let log_k = self.k.ln() - log_denom;
        let mut out = vec![log_k; self.vocab.len()];
        out[bos] = NEG_INF;
        if let Some(counts) = counts {
            for (&tok, &c) in counts {
                out[tok.index()] = (c as f64 + self.k).ln() - log_denom;
            }
        }
        out
    }

    /// Log-probability of a whitespace-tokenized sentence, including `<eos>`.
    pub fn sentence_logprob(&self, text: &str) -> f64 {
        let mut seq = self.vocab.encode(text);
        seq.push(self.vocab.special(EOS));
        (0..seq.len())
            .map(|i| self.conditional(&seq[..i])[seq[i].index()])
            .sum()
    }

    pub fn to_json(&self) -> String {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (ctx, cont) in &self.table {
            let key = ctx
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let row = cont
                .counts
                .iter()
                .map(|(t, c)| (t.to_string(), *c))
                .collect();
            counts.insert(key, row);
        }
        let file = ModelFile {
            order: self.order,
            k: self.k,
            vocab: self.vocab.words.clone(),
            counts,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, NGramError> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| NGramError::InvalidModel(e.to_string()))?;
        validate_params(file.order, file.k)?;
        let vocab = Vocabulary::from_sorted(file.vocab)?;
        let parse_id = |s: &str| -> Result<TokenId, NGramError> {
            let id: u32 = s
                .parse()
                .map_err(|_| NGramError::InvalidModel(format!("bad token id {s:?}")))?;
            if (id as usize) < vocab.len() {
                Ok(TokenId(id))
            } else {
                Err(NGramError::InvalidModel(format!(
                    "token id {id} out of range"
                )))
            }
        };
        let mut table = HashMap::new();
        for (key, row) in file.counts {
            let ctx = key
                .split_whitespace()
                .map(parse_id)
                .collect::<Result<Vec<_>, _>>()?;
            if ctx.len() != file.order - 1 {
                return Err(NGramError::InvalidModel(format!(
                    "context {key:?} has wrong length for order {}",
                    file.order
                )));
            }
            let mut cont = Continuations::default();
            for (tok, c) in row {
                cont.counts.insert(parse_id(&tok)?, c);
                cont.total += c;
            }
            table.insert(ctx, cont);
        }
        Ok(Self::assemble(file.order, file.k, vocab, table))
    }

    pub fn save(&self, path: &Path) -> Result<(), NGramError> {
        fs::write(path, self.to_json()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, NGramError> {
        let json = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&json)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> NGramError {
    NGramError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn validate_params(order: usize, k: f64) -> Result<(), NGramError> {
    if order < 1 {
        return Err(NGramError::InvalidOrder);
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(NGramError::InvalidK(k));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    order: usize,
    k: f64,
    vocab: Vec<String>,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl Provider for NGramModel {
    fn vocab_info(&self) -> &VocabInfo {
        &self.info
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector, ProviderError> {
        check_ids(context, self.vocab.len())?;
        Ok(LogProbVector::new(self.conditional(context)).expect("smoothed vector is finite"))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        Ok(self.vocab.encode(text))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        check_ids(ids, self.vocab.len())?;
        Ok(ids
            .iter()
            .map(|id| self.vocab.words[id.index()].as_str())
            .collect::<Vec<_>>()
            .join(" "))
    }
}
