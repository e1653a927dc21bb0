//! Acceptance criteria. Every test prints one `[PASS]`/`[FAIL]` line and
//! asserts. Run with `cargo test --test acceptance -- --nocapture` to see
//! the lines.

mod common;

use std::fs;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_select, random_contexts, toy_pair};
use unlearn_probe::guidance::{baseline_decode, decode, filter_candidates, select_next};
use unlearn_probe::harness::{build_toy_pair, run_sweep, AuditConfig, SweepGrid};
use unlearn_probe::metrics::{a_esr, lcs_length, rouge_l_recall, ScoreSet};
use unlearn_probe::provider::{serve_provider, HttpProvider, NGramModel, Provider};
use unlearn_probe::types::{GuidanceConfig, LogProbVector, Method, TokenId, NEG_INF};

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "[{}] criterion {id}: {name} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} failed: {name}: {detail}");
}

fn cfg(w: f64, gamma: f64, max: usize) -> GuidanceConfig {
    GuidanceConfig {
        w,
        gamma,
        max_new_tokens: max,
        tau_list: vec![0.9, 1.0],
    }
}

/// Random vector pair over a vocabulary of at most 64 tokens. Half of the
/// draws use values on a 0.25 grid so exact ties occur.
fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=64);
    let quantized = rng.gen_bool(0.5);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if rng.gen_bool(0.15) {
            NEG_INF
        } else if quantized {
            -(rng.gen_range(0..=40) as f64) * 0.25
        } else {
            rng.gen_range(-10.0..=0.0)
        }
    };
    let mut pre: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    let mut post: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    for v in [&mut pre, &mut post] {
        if v.iter().all(|x| *x == NEG_INF) {
            let i = rng.gen_range(0..n);
            v[i] = -1.0;
        }
    }
    (pre, post)
}

fn random_w_gamma(rng: &mut ChaCha8Rng) -> (f64, f64) {
    const WS: [f64; 6] = [1.0, 1.25, 1.5, 2.0, 2.5, 3.0];
    const GS: [f64; 6] = [1e-6, 1e-5, 1e-3, 0.1, 0.5, 1.0];
    if rng.gen_bool(0.5) {
        (
            WS[rng.gen_range(0..WS.len())],
            GS[rng.gen_range(0..GS.len())],
        )
    } else {
        (
            rng.gen_range(1.0..4.0),
            10f64.powf(rng.gen_range(-6.0..=0.0)),
        )
    }
}

#[test]
fn criterion_1_guidance_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (pre, post) = random_pair(&mut rng);
        let (w, gamma) = random_w_gamma(&mut rng);
        let a = LogProbVector::new(pre.clone()).unwrap();
        let b = LogProbVector::new(post.clone()).unwrap();
        let step = select_next(&a, &b, &cfg(w, gamma, 1)).unwrap();
        if step.chosen.index() != oracle_select(&pre, &post, w, gamma) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "select_next matches brute force on 1000 random pairs",
        mismatches == 0 && elapsed < Duration::from_secs(5),
        &format!("{mismatches} mismatches, {elapsed:.2?}"),
    );
}

/// Whether some step of the greedy path from `ctx` has more than one token
/// at the pre maximum.
fn has_tied_max(pre: &NGramModel, ctx: &[TokenId], path: &[TokenId]) -> bool {
    let mut ctx = ctx.to_vec();
    for t in path.iter().copied().map(Some).chain([None]) {
        let lp = pre.next_logprobs(&ctx).unwrap();
        let max = lp.max();
        if lp.values().iter().filter(|&&x| x == max).count() > 1 {
            return true;
        }
        match t {
            Some(t) => ctx.push(t),
            None => break,
        }
    }
    false
}

#[test]
fn criterion_2_reduction_identities() {
    let pair = toy_pair(3, 0.1);
    let contexts = random_contexts(&pair, 60, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pre, post) = (pair.pre.as_ref(), pair.post.as_ref());
    let mut fails = [0usize; 3];
    let mut tied_fails = [0usize; 3];
    for ctx in &contexts {
        let (w, gamma) = random_w_gamma(&mut rng);
        let greedy_pre = baseline_decode(pre, ctx, &cfg(1.0, gamma, 10)).unwrap();
        let tied = has_tied_max(pre, ctx, &greedy_pre);

        // (a) w = 1
        if decode(pre, post, ctx, &cfg(1.0, gamma, 10)).unwrap() != greedy_pre {
            fails[0] += 1;
            tied_fails[0] += tied as usize;
        }
        // (b) gamma = 1
        if decode(pre, post, ctx, &cfg(w, 1.0, 10)).unwrap() != greedy_pre {
            fails[1] += 1;
            tied_fails[1] += tied as usize;
        }
        // (c) identical providers
        if decode(pre, pre, ctx, &cfg(w, gamma, 10)).unwrap() != greedy_pre {
            fails[2] += 1;
            tied_fails[2] += tied as usize;
        }
    }
    let n = contexts.len();
    verdict(
        2,
        "w=1, gamma=1 and identical-provider reductions to greedy decoding",
        fails == [0, 0, 0],
        &format!(
            "{n} contexts each; mismatches (a) {} (b) {} (c) {}; of which with a tied pre maximum on the greedy path: {:?}",
            fails[0], fails[1], fails[2], tied_fails
        ),
    );
}

#[test]
fn criterion_3_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut changed = 0;
    for _ in 0..200 {
        let (pre, post) = random_pair(&mut rng);
        let (w, gamma) = random_w_gamma(&mut rng);
        let c1: f64 = rng.gen_range(-5.0..5.0);
        let c2: f64 = rng.gen_range(-5.0..5.0);
        let shift = |v: &[f64], c: f64| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let (a, b) = (
            LogProbVector::new(pre.clone()).unwrap(),
            LogProbVector::new(post.clone()).unwrap(),
        );
        let (sa, sb) = (
            LogProbVector::new(shift(&pre, c1)).unwrap(),
            LogProbVector::new(shift(&post, c2)).unwrap(),
        );
        let same_filter = filter_candidates(&a, gamma).unwrap().member_ids
            == filter_candidates(&sa, gamma).unwrap().member_ids;
        let c = cfg(w, gamma, 1);
        let same_choice =
            select_next(&a, &b, &c).unwrap().chosen == select_next(&sa, &sb, &c).unwrap().chosen;
        if !(same_filter && same_choice) {
            changed += 1;
        }
    }
    verdict(
        3,
        "per-context shifts leave candidates and choice unchanged",
        changed == 0,
        &format!("200 trials, {changed} changed"),
    );
}

/// Longest common subsequence by enumerating subsequences of the shorter
/// sequence, longest first.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let embeds = |mask: u32| {
        let mut it = long.iter();
        (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .all(|i| it.any(|y| *y == short[i]))
    };
    let mut best = 0;
    for mask in 0..1u32 << short.len() {
        let n = mask.count_ones() as usize;
        if n > best && embeds(mask) {
            best = n;
        }
    }
    best
}

fn sequences(len: usize) -> Vec<Vec<u8>> {
    (0..3usize.pow(len as u32))
        .map(|mut n| {
            (0..len)
                .map(|_| {
                    let d = (n % 3) as u8;
                    n /= 3;
                    d
                })
                .collect()
        })
        .collect()
}

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();
    let by_len: Vec<Vec<Vec<u8>>> = (0..=12).map(sequences).collect();
    let mut pairs = 0u64;
    let mut lcs_bad = 0u64;
    // Every pair whose lengths sum to at most 12: each side ranges over all
    // lengths 0..=12 over the 3-symbol alphabet.
    for la in 0..=12 {
        for lb in 0..=(12 - la) {
            for a in &by_len[la] {
                for b in &by_len[lb] {
                    pairs += 1;
                    if lcs_length(a, b) != brute_lcs(a, b) {
                        lcs_bad += 1;
                    }
                }
            }
        }
    }
    // Long-by-long pairs, sampled.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20_000 {
        let a: Vec<u8> = (0..rng.gen_range(7..=12))
            .map(|_| rng.gen_range(0..3))
            .collect();
        let b: Vec<u8> = (0..rng.gen_range(7..=12))
            .map(|_| rng.gen_range(0..3))
            .collect();
        pairs += 1;
        if lcs_length(&a, &b) != brute_lcs(&a, &b) {
            lcs_bad += 1;
        }
    }
    let rouge = rouge_l_recall("the cat sat", "the dog sat").unwrap();
    let mut monotone = true;
    for _ in 0..500 {
        let mut set = ScoreSet::new(Method::Guided);
        for i in 0..rng.gen_range(1..50) {
            let s = if rng.gen_bool(0.3) {
                1.0
            } else {
                rng.gen_range(0.0..=1.0)
            };
            set.per_record.insert(format!("r{i}"), s);
        }
        let mut taus: Vec<f64> = (0..8).map(|_| rng.gen_range(0.001..=1.0)).collect();
        taus.push(1.0);
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let vals: Vec<f64> = taus.iter().map(|&t| a_esr(&set, t).unwrap()).collect();
        monotone &= vals.windows(2).all(|w| w[0] >= w[1]);
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "LCS oracle, ROUGE-L(R) example and A-ESR monotonicity",
        lcs_bad == 0 && rouge == 2.0 / 3.0 && monotone && elapsed < Duration::from_secs(30),
        &format!(
            "{pairs} LCS pairs, {lcs_bad} wrong; rouge={rouge}; monotone={monotone}; {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_5_toy_unlearning_reproduction() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::toy_corpus(7);
    assert!(corpus.retain.len() >= 200 && corpus.forget.len() >= 30);
    let retain_path = dir.path().join("retain.txt");
    let forget_path = dir.path().join("forget.txt");
    fs::write(&retain_path, corpus.retain.join("\n")).unwrap();
    fs::write(&forget_path, corpus.forget.join("\n")).unwrap();

    let pair = build_toy_pair(
        &retain_path,
        &forget_path,
        3,
        0.1,
        &dir.path().join("models"),
    )
    .unwrap();

    // Forget sentences must contain trigrams the retain set never shows.
    let trigrams = |s: &String| -> Vec<String> {
        let w: Vec<&str> = s.split_whitespace().collect();
        w.windows(3).map(|t| t.join(" ")).collect()
    };
    let retain_tri: std::collections::HashSet<String> =
        corpus.retain.iter().flat_map(trigrams).collect();
    assert!(corpus
        .forget
        .iter()
        .all(|s| trigrams(s).iter().any(|t| !retain_tri.contains(t))));

    let grid = SweepGrid {
        w_values: vec![1.5, 2.0, 2.5],
        gamma_values: vec![1e-5],
    };
    let pre_uri = format!("toy:{}", pair.pre_model.display());
    let post_uri = format!("toy:{}", pair.post_model.display());
    let report = run_sweep(
        &pair.forget_dataset,
        &pre_uri,
        &post_uri,
        &grid,
        &AuditConfig::default(),
    )
    .unwrap();

    let pre = report.row(Method::PreOnly, None, None).unwrap();
    let post = report.row(Method::PostOnly, None, None).unwrap();
    let best = report.best_guided().unwrap();
    let (r_post, r_pre, r_best) = (
        post.mean_rouge_l_recall,
        pre.mean_rouge_l_recall,
        best.mean_rouge_l_recall,
    );
    let (e_post, e_pre, e_best) = (
        post.a_esr_at(1.0).unwrap(),
        pre.a_esr_at(1.0).unwrap(),
        best.a_esr_at(1.0).unwrap(),
    );
    for row in &report.rows {
        println!(
            "    {:<9} w={:<5} rouge_l_r={:.3} a_esr_0.9={:.3} a_esr_1.0={:.3}",
            row.method.as_str(),
            row.w.map(|w| w.to_string()).unwrap_or_else(|| "-".into()),
            row.mean_rouge_l_recall,
            row.a_esr_at(0.9).unwrap(),
            row.a_esr_at(1.0).unwrap()
        );
    }
    let elapsed = start.elapsed();
    let ok = r_post < r_pre
        && r_pre <= r_best
        && r_best - r_pre > 0.0
        && e_post < e_pre
        && e_pre <= e_best
        && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "toy exact-unlearning: post-only < pre-only < best guided",
        ok,
        &format!(
            "ROUGE-L(R) {r_post:.3} < {r_pre:.3} < {r_best:.3} (best w={:?}); A-ESR_1.0 {e_post:.3} < {e_pre:.3} <= {e_best:.3}; {elapsed:.2?}",
            best.w.unwrap()
        ),
    );
}

#[test]
fn criterion_6_wire_protocol_loopback() {
    let start = Instant::now();
    let pair = toy_pair(3, 0.1);
    let server = serve_provider(pair.pre.clone(), "127.0.0.1:0").unwrap();
    let remote = HttpProvider::connect(&server.url()).unwrap();
    let same_hash = remote.vocab_info().vocab_hash == pair.pre.vocab_info().vocab_hash;

    let mut worst = 0.0f64;
    for ctx in random_contexts(&pair, 100, 6) {
        let a = pair.pre.next_logprobs(&ctx).unwrap();
        let b = remote.next_logprobs(&ctx).unwrap();
        assert_eq!(a.vocab_size(), b.vocab_size());
        for (x, y) in a.values().iter().zip(b.values()) {
            let d = if x == y { 0.0 } else { (x - y).abs() };
            worst = worst.max(d);
        }
    }

    let client = reqwest::blocking::Client::new();
    let mut malformed_ok = true;
    for (path, body) in [
        ("/v1/logits", "{\"tokens\": [1, 2"),
        ("/v1/logits", "{\"tokens\": [-3]}"),
        ("/v1/tokenize", "{\"txt\": \"a\"}"),
        ("/v1/detokenize", "[]"),
    ] {
        let resp = client
            .post(format!("{}{path}", server.url()))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .unwrap();
        let status = resp.status().as_u16();
        let json: serde_json::Value = resp.json().unwrap_or(serde_json::Value::Null);
        malformed_ok &= status == 400 && json["error"]["code"].is_string();
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        "HTTP loopback equals in-process queries; malformed bodies get 400",
        same_hash && worst <= 1e-9 && malformed_ok && elapsed < Duration::from_secs(10),
        &format!("100 contexts, max |diff| {worst:e}, hash match {same_hash}, 400s ok {malformed_ok}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_7_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::toy_corpus(7);
    fs::write(dir.path().join("retain.txt"), corpus.retain.join("\n")).unwrap();
    fs::write(dir.path().join("forget.txt"), corpus.forget.join("\n")).unwrap();
    let bin = env!("CARGO_BIN_EXE_unlearn-probe");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "toy-pair",
        "--retain",
        "retain.txt",
        "--forget",
        "forget.txt",
        "--out",
        "m",
    ]);
    let mut outputs = Vec::new();
    for (workers, fmt) in [("1", "json"), ("4", "json"), ("1", "csv"), ("4", "csv")] {
        let out = format!("report-{workers}.{fmt}");
        run(&[
            "sweep",
            "--dataset",
            "m/forget.jsonl",
            "--pre",
            "toy:m/pre.json",
            "--post",
            "toy:m/post.json",
            "--w",
            "1.5",
            "--w",
            "2.0",
            "--w",
            "2.5",
            "--gamma",
            "1e-5",
            "--workers",
            workers,
            "--format",
            fmt,
            "--out",
            &out,
        ]);
        outputs.push(fs::read(dir.path().join(out)).unwrap());
    }
    let ok = outputs[0] == outputs[1] && outputs[2] == outputs[3] && !outputs[0].is_empty();
    verdict(
        7,
        "sweep reports are byte-identical across worker counts",
        ok,
        &format!(
            "json {} bytes, csv {} bytes",
            outputs[0].len(),
            outputs[2].len()
        ),
    );
}

#[test]
fn criterion_8_ngram_normalization() {
    let pair = toy_pair(3, 0.1);
    let corpus = &pair.corpus.retain;
    let mut models: Vec<(String, Arc<NGramModel>)> = vec![
        ("pre".into(), pair.pre.clone()),
        ("post".into(), pair.post.clone()),
    ];
    for order in [1, 2, 4] {
        models.push((
            format!("order{order}"),
            Arc::new(NGramModel::train(corpus, order, 0.1).unwrap()),
        ));
    }
    models.push((
        "k=1".into(),
        Arc::new(NGramModel::train(corpus, 3, 1.0).unwrap()),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for (_, m) in &models {
        let v = m.vocab().len() as u32;
        let sentence_ctx = random_contexts(&pair, 250, rng.gen());
        let random_ctx = (0..250).map(|_| {
            (0..rng.gen_range(0..6))
                .map(|_| TokenId(rng.gen_range(0..v)))
                .collect::<Vec<_>>()
        });
        for ctx in sentence_ctx.into_iter().chain(random_ctx) {
            let lse = m.next_logprobs(&ctx).unwrap().log_sum_exp();
            worst = worst.max(lse.abs());
        }
    }
    verdict(
        8,
        "n-gram log-sum-exp within 1e-9 of 0",
        worst <= 1e-9,
        &format!(
            "{} models x 500 contexts, max |lse| {worst:e}",
            models.len()
        ),
    );
}
