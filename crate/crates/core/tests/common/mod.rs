#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_probe::provider::{NGramModel, ProviderHandle, Vocabulary};
use unlearn_probe::types::TokenId;

const FIRST: &[&str] = &[
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hiro", "ines", "jonas",
    "kemal", "lena",
];
const LAST: &[&str] = &[
    "abbott",
    "baker",
    "castro",
    "duval",
    "eriksen",
    "fujita",
    "garcia",
    "horvat",
    "ivanova",
    "jensen",
    "kowalski",
    "larsen",
    "moreau",
    "novak",
    "okafor",
    "petrov",
    "quinn",
    "rossi",
    "silva",
    "tanaka",
    "ueda",
    "varga",
    "weber",
    "xu",
    "yilmaz",
    "zimmer",
    "adler",
    "brandt",
    "conti",
    "dahl",
    "esposito",
    "falk",
    "gruber",
    "haas",
    "iqbal",
    "jovanovic",
    "keller",
    "lindqvist",
    "mendes",
    "nakamura",
];
const DRUGS: &[&str] = &[
    "ibuprofen",
    "warfarin",
    "metformin",
    "insulin",
    "lisinopril",
    "atorvastatin",
    "amoxicillin",
    "omeprazole",
    "sertraline",
    "levothyroxine",
    "prednisone",
    "albuterol",
];
const DOSE: &[&str] = &[
    "5mg", "10mg", "20mg", "40mg", "50mg", "100mg", "250mg", "500mg",
];
const WHEN: &[&str] = &[
    "every", "each", "before", "after", "with", "during", "around", "near",
];
const TIME: &[&str] = &[
    "morning",
    "evening",
    "breakfast",
    "lunch",
    "dinner",
    "noon",
    "midnight",
    "bedtime",
    "sunrise",
    "sunset",
];
const PLACE: &[&str] = &["clinic", "hospital", "pharmacy", "ward", "office", "lab"];
const DAY: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

/// A deterministic retain/forget split mimicking patient records.
///
/// Each forget sentence is `the patient F L takes DRUG DOSE WHEN TIME`; the
/// first five tokens are the attacker prefix. For some patients the retain
/// set holds two records with a different drug after the same `L takes`
/// context, so the pre model's greedy choice follows the retain data while the
/// removed record only shows up as a pre/post difference.
pub struct ToyCorpus {
    pub retain: Vec<String>,
    pub forget: Vec<String>,
}

pub fn toy_corpus(seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retain = Vec::new();
    let mut forget = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, pool: &[&'static str]| *pool.choose(rng).unwrap();

    for (i, last) in LAST.iter().enumerate() {
        let first = FIRST[i % FIRST.len()];
        let forget_drug = pick(&mut rng, DRUGS);
        let forgotten = i < 36;
        if forgotten {
            forget.push(format!(
                "the patient {first} {last} takes {forget_drug} {} {} {}",
                pick(&mut rng, DOSE),
                pick(&mut rng, WHEN),
                pick(&mut rng, TIME)
            ));
        }
        // Patients 0..24 also have retained prescriptions that collide with
        // the forgotten one on the `L takes` context.
        if i < 24 || !forgotten {
            let retained_drug = loop {
                let d = pick(&mut rng, DRUGS);
                if d != forget_drug {
                    break d;
                }
            };
            for _ in 0..2 {
                retain.push(format!(
                    "the patient {first} {last} takes {retained_drug} {} {} {}",
                    pick(&mut rng, DOSE),
                    pick(&mut rng, WHEN),
                    pick(&mut rng, TIME)
                ));
            }
        }
        retain.push(format!(
            "{first} {last} visited the {} on {}",
            pick(&mut rng, PLACE),
            pick(&mut rng, DAY)
        ));
    }
    let mut seen: BTreeSet<String> = retain.iter().cloned().collect();
    while retain.len() < 220 {
        let s = format!(
            "the {} opens at {} on {} for {} refills",
            pick(&mut rng, PLACE),
            pick(&mut rng, TIME),
            pick(&mut rng, DAY),
            pick(&mut rng, DRUGS)
        );
        if seen.insert(s.clone()) {
            retain.push(s);
        }
    }
    ToyCorpus { retain, forget }
}

pub struct ToyPair {
    pub pre: Arc<NGramModel>,
    pub post: Arc<NGramModel>,
    pub corpus: ToyCorpus,
}

impl ToyPair {
    pub fn handles(&self) -> (ProviderHandle, ProviderHandle) {
        (self.pre.clone(), self.post.clone())
    }
}

pub fn toy_pair(order: usize, k: f64) -> ToyPair {
    let corpus = toy_corpus(7);
    let union: Vec<&String> = corpus.retain.iter().chain(&corpus.forget).collect();
    let vocab = Vocabulary::from_corpus(&union);
    let pre = NGramModel::train_with_vocab(&union, order, k, vocab.clone()).unwrap();
    let post = NGramModel::train_with_vocab(&corpus.retain, order, k, vocab).unwrap();
    ToyPair {
        pre: Arc::new(pre),
        post: Arc::new(post),
        corpus,
    }
}

/// Random contexts: prefixes of corpus sentences and random token strings.
pub fn random_contexts(pair: &ToyPair, n: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = pair.pre.vocab();
    let sentences: Vec<&String> = pair
        .corpus
        .retain
        .iter()
        .chain(&pair.corpus.forget)
        .collect();
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                let s = sentences.choose(&mut rng).unwrap();
                let ids = vocab.encode(s);
                let len = rng.gen_range(1..ids.len());
                ids[..len].to_vec()
            } else {
                let len = rng.gen_range(1..6);
                // Skip id 0 (<bos>) so contexts look like text.
                (0..len)
                    .map(|_| TokenId(rng.gen_range(1..vocab.len() as u32)))
                    .collect()
            }
        })
        .collect()
}

/// Brute-force guided selection, written from the definitions and working in
/// probability space: candidates satisfy `p_pre(v) >= gamma * max p_pre`, the
/// score is `post + w * (pre - post)`, the best score wins with the smallest
/// id on ties, and an all `-inf` candidate set falls back to the pre argmax.
pub fn oracle_select(pre: &[f64], post: &[f64], w: f64, gamma: f64) -> usize {
    let p: Vec<f64> = pre.iter().map(|x| x.exp()).collect();
    let pmax = p.iter().cloned().fold(0.0, f64::max);
    let mut best: Option<(usize, f64)> = None;
    for v in 0..pre.len() {
        if p[v] == 0.0 || p[v] < gamma * pmax {
            continue;
        }
        if pre[v] == f64::NEG_INFINITY || post[v] == f64::NEG_INFINITY {
            continue;
        }
        let s = post[v] + w * (pre[v] - post[v]);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((v, s));
        }
    }
    match best {
        Some((v, _)) => v,
        None => (0..pre.len()).find(|&v| p[v] == pmax).unwrap(),
    }
}

/// Greedy loop over an arbitrary per-step chooser; stops on `eos` or `max`.
pub fn oracle_generate(
    prefix: &[TokenId],
    max: usize,
    eos: TokenId,
    mut step: impl FnMut(&[TokenId]) -> TokenId,
) -> Vec<TokenId> {
    let mut ctx = prefix.to_vec();
    let mut out = Vec::new();
    while out.len() < max {
        let t = step(&ctx);
        if t == eos {
            break;
        }
        ctx.push(t);
        out.push(t);
    }
    out
}
